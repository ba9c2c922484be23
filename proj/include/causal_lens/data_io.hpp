#pragma once

// JSON-lines serialization of boundary data. One header line, then records
// grouped by kind in a fixed order. Import re-derives the causal tags from
// the header's model and rejects records whose geometry disagrees with the
// tag their kind implies.

#include "causal_lens/boundary_data.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace causal_lens {

using json = nlohmann::json;

struct DataHeader {
  std::string model = "minkowski-block";
  ModelParams params;
  int n = 3;
  std::uint64_t seed = 0;
  int version = 1;
};

struct Dataset {
  DataHeader header;
  std::vector<TimeProbeTriple> time_probe;
  std::vector<LensTriple> lens;
  std::vector<ScatterPair> scatter;
  std::vector<SkyShadowSample> shadows;

  bool empty() const { return time_probe.empty() && lens.empty() && scatter.empty() && shadows.empty(); }
};

inline DataHeader header_for(const MetricModel& m, std::uint64_t seed) {
  DataHeader h;
  h.model = m.name();
  h.params = m.params();
  h.n = m.dim();
  h.seed = seed;
  return h;
}

inline ModelPtr model_of(const DataHeader& h) {
  ModelParams p = h.params;
  p["n"] = h.n;
  return make_model(h.model, p);
}

namespace io_detail {

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json mat_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

inline json bv_json(const BoundaryVector& b) { return json{{"x", vec_json(b.pv.x)}, {"v", vec_json(b.pv.v)}}; }

inline json id_json(const std::optional<PointId>& id, bool blind) {
  return (id && !blind) ? json(*id) : json(nullptr);
}

[[noreturn]] inline void fail(size_t line, const std::string& what) {
  throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + what);
}

inline double num(const json& j, size_t line, const char* field) {
  if (!j.is_number()) fail(line, std::string("field '") + field + "' is not a number");
  const double d = j.get<double>();
  if (!std::isfinite(d)) fail(line, std::string("field '") + field + "' is not finite");
  return d;
}

inline Vec vec_of(const json& j, int n, size_t line, const char* field) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    fail(line, std::string("field '") + field + "' must be an array of " + std::to_string(n) + " numbers");
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = num(j[static_cast<size_t>(i)], line, field);
  return v;
}

inline Mat mat_of(const json& j, int k, size_t line) {
  if (!j.is_array() || static_cast<int>(j.size()) != k) fail(line, "field 'b' must be a square matrix");
  Mat b(k, k);
  for (int i = 0; i < k; ++i) b.row(i) = vec_of(j[static_cast<size_t>(i)], k, line, "b").transpose();
  return b;
}

inline const json& field(const json& j, const char* name, size_t line) {
  if (!j.is_object() || !j.contains(name)) fail(line, std::string("missing field '") + name + "'");
  return j[name];
}

inline std::optional<PointId> id_of(const json& j, size_t line) {
  if (!j.contains("point_id") || j["point_id"].is_null()) return std::nullopt;
  if (!j["point_id"].is_number_integer()) fail(line, "point_id must be an integer or null");
  return j["point_id"].get<PointId>();
}

/// Parses a boundary vector and checks it against the expected tags.
inline BoundaryVector bv_of(const MetricModel& m, const json& j, size_t line, const char* name, Causal expect,
                            const Tolerances& tol) {
  const json& o = field(j, name, line);
  const int n = m.dim();
  PointVector pv{vec_of(field(o, "x", line), n, line, "x"), vec_of(field(o, "v", line), n, line, "v")};
  if (pv.v.squaredNorm() == 0.0) fail(line, std::string(name) + ": zero vector");
  if (!m.chart_box().contains(pv.x)) fail(line, std::string(name) + ": base point outside the chart");
  if (std::abs(m.boundary_function(pv.x)) > tol.import_lightlike)
    fail(line, std::string(name) + ": base point is not on the boundary");
  const BoundaryVector b = detail::tag_boundary(m, pv, tol);
  if (b.causal != expect)
    fail(line, std::string(name) + ": tag mismatch (expected " + to_string(expect) + ", g(v,v) = " +
                   std::to_string(pv.v.dot(m.metric(pv.x) * pv.v)) + ")");
  if (b.direction != TimeDir::future) fail(line, std::string(name) + ": tag mismatch (expected future-directed)");
  return b;
}

inline double length_of(const json& j, size_t line) {
  const double t = num(field(j, "t", line), line, "t");
  if (t < 0) fail(line, "negative length");
  return t;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------

inline json header_json(const DataHeader& h) {
  json params = json::object();
  for (const auto& [k, v] : h.params)
    if (k != "n") params[k] = v;
  return json{{"kind", "header"}, {"model", h.model}, {"params", params},
              {"n", h.n},           {"seed", h.seed},   {"version", h.version}};
}

inline json record_json(const TimeProbeTriple& r, bool blind) {
  using namespace io_detail;
  json j{{"kind", "time_probe"}, {"xi", bv_json(r.xi)}, {"t", r.t}, {"eta", bv_json(r.eta)}};
  if (!blind && r.point_id) j["point_id"] = *r.point_id;
  return j;
}

inline json record_json(const LensTriple& r, bool blind) {
  using namespace io_detail;
  json j{{"kind", "lens"}, {"xi", bv_json(r.xi)}, {"t", r.t}, {"eta", bv_json(r.eta)}};
  j["approach"] = (!blind && r.approach) ? json(*r.approach) : json(nullptr);
  if (!blind && r.point_id) j["point_id"] = *r.point_id;
  return j;
}

inline json record_json(const ScatterPair& r, bool blind) {
  using namespace io_detail;
  json j{{"kind", "scatter"},
         {"sub", r.kind == ScatterKind::broken ? "broken" : "unbroken"},
         {"xi", bv_json(r.xi)},
         {"eta", bv_json(r.eta)}};
  if (!blind && r.point_id) j["point_id"] = *r.point_id;
  return j;
}

inline json record_json(const SkyShadowSample& r, bool blind) {
  using namespace io_detail;
  json vs = json::array();
  for (const auto& v : r.vectors) {
    json o = bv_json(v.eta);
    if (v.b) o["b"] = mat_json(*v.b);
    vs.push_back(o);
  }
  return json{{"kind", "shadow"}, {"point_id", id_json(r.point_id, blind)}, {"vectors", vs}};
}

/// Writes header + records. Blind mode strips point ids and ladder indices.
inline void write_dataset(std::ostream& os, const Dataset& d, bool blind = false) {
  os << header_json(d.header).dump() << '\n';
  for (const auto& r : d.time_probe) os << record_json(r, blind).dump() << '\n';
  for (const auto& r : d.lens) os << record_json(r, blind).dump() << '\n';
  for (const auto& r : d.scatter) os << record_json(r, blind).dump() << '\n';
  for (const auto& r : d.shadows) os << record_json(r, blind).dump() << '\n';
}

inline DataHeader parse_header(const json& j, size_t line = 1) {
  using namespace io_detail;
  if (!j.is_object() || j.value("kind", "") != "header") fail(line, "the first line must be a header record");
  DataHeader h;
  const json& model = field(j, "model", line);
  if (!model.is_string()) fail(line, "header model must be a string");
  h.model = model.get<std::string>();
  if (!field(j, "n", line).is_number_integer()) fail(line, "header n must be an integer");
  h.n = j["n"].get<int>();
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) fail(line, "header seed must be an integer");
    h.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("params")) {
    if (!j["params"].is_object()) fail(line, "header params must be an object");
    for (const auto& [k, v] : j["params"].items()) h.params[k] = num(v, line, "params");
  }
  h.params["n"] = h.n;
  h.version = j.value("version", 1);
  if (h.version != 1) fail(line, "unsupported version " + std::to_string(h.version));
  return h;
}

inline Dataset read_dataset(std::istream& is, const Tolerances& tol = {}) {
  using namespace io_detail;
  Dataset d;
  std::string text;
  size_t line = 0;
  ModelPtr m;
  while (std::getline(is, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') fail(line, "CRLF line ending");
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(line, std::string("malformed JSON: ") + e.what());
    }
    if (!m) {
      d.header = parse_header(j, line);
      m = model_of(d.header);
      continue;
    }
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) fail(line, "record without a kind");
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "time_probe") {
      TimeProbeTriple r;
      r.xi = bv_of(*m, j, line, "xi", Causal::timelike, tol);
      r.t = length_of(j, line);
      r.eta = bv_of(*m, j, line, "eta", Causal::lightlike, tol);
      r.point_id = id_of(j, line);
      d.time_probe.push_back(std::move(r));
    } else if (kind == "lens") {
      LensTriple r;
      r.xi = bv_of(*m, j, line, "xi", Causal::timelike, tol);
      r.t = length_of(j, line);
      r.eta = bv_of(*m, j, line, "eta", Causal::timelike, tol);
      if (j.contains("approach") && !j["approach"].is_null()) {
        if (!j["approach"].is_number_integer()) fail(line, "approach must be an integer or null");
        r.approach = j["approach"].get<int>();
      }
      r.point_id = id_of(j, line);
      d.lens.push_back(std::move(r));
    } else if (kind == "scatter") {
      ScatterPair r;
      const std::string sub = field(j, "sub", line).is_string() ? j["sub"].get<std::string>() : "";
      if (sub == "broken")
        r.kind = ScatterKind::broken;
      else if (sub == "unbroken")
        r.kind = ScatterKind::unbroken;
      else
        fail(line, "scatter sub must be \"broken\" or \"unbroken\"");
      r.xi = bv_of(*m, j, line, "xi", Causal::lightlike, tol);
      r.eta = bv_of(*m, j, line, "eta", Causal::lightlike, tol);
      r.point_id = id_of(j, line);
      d.scatter.push_back(std::move(r));
    } else if (kind == "shadow") {
      SkyShadowSample s;
      s.point_id = id_of(j, line);
      const json& vs = field(j, "vectors", line);
      if (!vs.is_array()) fail(line, "shadow vectors must be an array");
      for (const json& o : vs) {
        ShadowVector v;
        v.eta = bv_of(*m, json{{"eta", o}}, line, "eta", Causal::lightlike, tol);
        if (o.contains("b")) v.b = mat_of(o["b"], m->dim() - 2, line);
        s.vectors.push_back(std::move(v));
      }
      d.shadows.push_back(std::move(s));
    } else if (kind == "header") {
      fail(line, "second header");
    } else {
      fail(line, "unknown record kind '" + kind + "'");
    }
  }
  if (!m) throw Error(ErrorKind::parse, "empty file: missing header");
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d, bool blind = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path + "' for writing");
  write_dataset(os, d, blind);
  if (!os) throw Error(ErrorKind::io, "write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path, const Tolerances& tol = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return read_dataset(is, tol);
}

inline std::string to_jsonl(const Dataset& d, bool blind = false) {
  std::ostringstream os;
  write_dataset(os, d, blind);
  return os.str();
}

}  // namespace causal_lens
