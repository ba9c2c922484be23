// causal_lens: generate boundary data on model spacetimes, reconstruct
// points and metrics from it, compare two models, dump CSV for plotting, and
// run the invariant self-checks.
//
// Exit codes: 0 ok, 1 selftest failure, 2 config, 3 model/hypothesis,
// 4 data (parse, inconsistent or degenerate data, numerical refusal),
// 5 reconstruction conflict or not well defined, 6 I/O.

#include "causal_lens/causal_lens.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace causal_lens;
using json = nlohmann::json;

namespace {

enum Exit { ok = 0, selftest_failed = 1, config = 2, model = 3, data = 4, conflict = 5, io = 6 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return Exit::config;
    case ErrorKind::model_definition:
    case ErrorKind::hypothesis: return Exit::model;
    case ErrorKind::conflict:
    case ErrorKind::not_well_defined: return Exit::conflict;
    case ErrorKind::io: return Exit::io;
    default: return Exit::data;
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

/// "k=v,k=v" parameter list.
ModelParams parse_params(const std::string& s) {
  ModelParams p;
  for (const auto& kv : split(s, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, "parameter '" + kv + "' is not key=value");
    try {
      p[trim(kv.substr(0, eq))] = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "parameter '" + kv + "' has a non-numeric value");
    }
  }
  return p;
}

/// Reads key=value lines (blank lines and '#' comments skipped) and returns
/// them as "--key=value" arguments. They are inserted before the command-line
/// flags, and every option keeps its last value, so flags win.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::config, path + ":" + std::to_string(no) + ": expected key=value");
    out.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<json>& lines) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path + "' for writing");
  for (const auto& j : lines) os << j.dump() << '\n';
  if (!os) throw Error(ErrorKind::io, "write to '" + path + "' failed");
}

std::vector<json> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  std::vector<json> out;
  std::string line;
  size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::parse, "line " + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

/// Prints each distinct warning once, with its multiplicity.
void print_warnings(const std::vector<std::string>& ws) {
  std::map<std::string, size_t> count;
  std::vector<std::string> order;
  for (const auto& w : ws)
    if (count[w]++ == 0) order.push_back(w);
  for (const auto& w : order) {
    std::cerr << "warning: " << w;
    if (count[w] > 1) std::cerr << " (x" << count[w] << ")";
    std::cerr << "\n";
  }
}

json vec_json(const Vec& v) { return io_detail::vec_json(v); }
json mat_json(const Mat& m) { return io_detail::mat_json(m); }

json report_header(const std::string& kind, const DataHeader& h) {
  json j = header_json(h);
  j.erase("kind");
  j["report"] = kind;
  return j;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string model = "minkowski-block";
  std::optional<int> n;
  std::optional<double> L, T, c;
  std::optional<int> axis;
  std::string params;
  int points = 50;
  int fan = 16;
  std::optional<int> fan_timelike, fan_lightlike;
  std::string kinds = "time_probe";
  std::uint64_t seed = 1;
  std::string out;
  bool blind = false;
  bool weingarten = false;
  int ladder_depth = 8;
  double ladder_start = 0.5;
  double min_rapidity = 0.1, max_rapidity = 0.8, jitter = 0.1;
};

ModelPtr build_model(const GenerateArgs& a) {
  ModelParams p = parse_params(a.params);
  if (a.n) p["n"] = *a.n;
  if (a.L) p["L"] = *a.L;
  if (a.T) p["T"] = *a.T;
  if (a.c) p["c"] = *a.c;
  if (a.axis) p["axis"] = *a.axis;
  return make_model(a.model, p);
}

int cmd_generate(const GenerateArgs& a) {
  if (a.points < 1) throw Error(ErrorKind::config, "--points must be >= 1");
  const auto kinds = split(a.kinds, ',');
  if (kinds.empty()) throw Error(ErrorKind::config, "--kinds is empty");
  for (const auto& k : kinds)
    if (k != "time_probe" && k != "lens" && k != "scatter" && k != "shadow")
      throw Error(ErrorKind::config, "unknown kind '" + k + "' (time_probe, lens, scatter, shadow)");
  const auto has = [&](const char* k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };

  const ModelPtr m = build_model(a);
  GenOptions opt;
  opt.ladder_depth = a.ladder_depth;
  opt.ladder_start = a.ladder_start;
  opt.min_rapidity = a.min_rapidity;
  opt.max_rapidity = a.max_rapidity;
  opt.jitter = a.jitter;
  opt.attach_weingarten = a.weingarten;
  if (!(a.ladder_start > 0 && a.ladder_start < 1)) throw Error(ErrorKind::config, "--ladder-start must be in (0, 1)");
  if (a.ladder_depth < 1) throw Error(ErrorKind::config, "--ladder-depth must be >= 1");
  const FanSizes fans{a.fan_timelike.value_or(a.fan), a.fan_lightlike.value_or(a.fan)};
  if (fans.timelike < 0 || fans.lightlike < 1) throw Error(ErrorKind::config, "fan sizes must be positive");

  const auto pts = sample_interior(*m, static_cast<size_t>(a.points), a.seed);
  Dataset d;
  d.header = header_for(*m, a.seed);
  GenReport rep;
  if (has("time_probe")) d.time_probe = gen_time_probe(*m, pts, fans, a.seed, opt, &rep);
  if (has("lens")) d.lens = gen_lens(*m, pts, fans, a.seed, opt, &rep);
  if (has("scatter")) d.scatter = gen_scattering(*m, pts, fans, a.seed, opt, &rep);
  if (has("shadow")) d.shadows = gen_sky_shadows(*m, pts, fans.lightlike, a.seed, opt, &rep);

  const std::string out = a.out.empty() ? std::string("data.jsonl") : a.out;
  save_dataset(out, d, a.blind);
  std::cout << "model " << m->name() << " (n=" << m->dim() << "), " << a.points << " points, seed " << a.seed << "\n";
  if (has("time_probe")) std::cout << "  time_probe: " << d.time_probe.size() << "\n";
  if (has("lens")) std::cout << "  lens:       " << d.lens.size() << "\n";
  if (has("scatter")) std::cout << "  scatter:    " << d.scatter.size() << "\n";
  if (has("shadow")) std::cout << "  shadow:     " << d.shadows.size() << "\n";
  std::cout << "  discarded nontransverse: " << rep.discarded_nontransverse << ", skipped points: " << rep.skipped_points
            << "\n";
  print_warnings(rep.warnings);
  std::cout << "wrote " << out << (a.blind ? " (blind)" : "") << "\n";
  return Exit::ok;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructArgs {
  std::string data;
  std::string out;  // report prefix
  ReconOptions recon{};
  LensOptions lens{};
  CliqueOptions cliques{};
  ConformalOptions conformal{};
  bool no_hypothesis_check = false;
};

std::string default_prefix(const std::string& data) {
  std::filesystem::path p(data);
  p.replace_extension();
  return p.string();
}

json group_line(const GroupReport& g, const ReconstructedPoint& p) {
  json j{{"label", p.label}, {"size", p.members.size()}, {"sigma_size", p.sigma.size()}};
  std::set<PointId> ids;
  bool all = true;
  for (int i : p.members) {
    const auto& id = g.omegas[static_cast<size_t>(i)].point_id;
    if (id) ids.insert(*id);
    else all = false;
  }
  if (all && !ids.empty()) j["point_ids"] = std::vector<PointId>(ids.begin(), ids.end());
  j["position"] = p.position.size() ? vec_json(p.position) : json(nullptr);
  j["fitted_g"] = p.fitted_g ? mat_json(*p.fitted_g) : json(nullptr);
  j["residual"] = p.residual;
  if (!p.fit_error.empty()) j["fit_error"] = p.fit_error;
  return j;
}

int cmd_reconstruct(const ReconstructArgs& a) {
  const Dataset d = load_dataset(a.data);
  const ModelPtr m = model_of(d.header);
  const std::string prefix = a.out.empty() ? default_prefix(a.data) : a.out;
  if (d.empty()) throw Error(ErrorKind::data_inconsistency, "data file has no records");
  if (!d.time_probe.empty() && !d.lens.empty())
    throw Error(ErrorKind::data_inconsistency, "time_probe and lens records cannot be reconstructed together");

  int code = Exit::ok;
  std::cout << "model " << m->name() << " (n=" << m->dim() << ")\n";

  std::vector<TimeProbeTriple> triples = d.time_probe;
  if (!d.lens.empty()) {
    const LensExtraction ex = lens_to_time_probe(*m, d.lens, a.lens);
    std::cout << "  lens: " << d.lens.size() << " records, " << ex.ladders.size() << " ladders, "
              << ex.triples.size() << " time-probe triples\n";
    print_warnings(ex.warnings);
    Dataset tp;
    tp.header = d.header;
    tp.time_probe = ex.triples;
    save_dataset(prefix + ".time_probe.jsonl", tp);
    std::cout << "wrote " << prefix << ".time_probe.jsonl\n";
    triples = ex.triples;
  }
  if (!triples.empty()) {
    GroupReport g;
    try {
      g = group_points(*m, triples, a.recon);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("grouping time-probe records: ") + e.what());
    }
    std::vector<json> lines{report_header("groups", d.header)};
    size_t fitted = 0;
    for (const auto& p : g.points) {
      lines.push_back(group_line(g, p));
      fitted += p.fitted_g.has_value();
    }
    for (const auto& c : g.conflicts) lines.push_back(json{{"conflict", c}});
    write_lines(prefix + ".groups.jsonl", lines);
    std::cout << "  time_probe: " << triples.size() << " triples, " << g.omegas.size() << " strip elements, "
              << g.points.size() << " points (" << fitted << " fitted), " << g.conflicts.size() << " conflicts\n";
    std::cout << "wrote " << prefix << ".groups.jsonl\n";
    for (const auto& c : g.conflicts) std::cerr << "conflict: " << c << "\n";
    if (!g.conflicts.empty()) code = Exit::conflict;
  }
  if (!d.scatter.empty()) {
    CliqueOptions co = a.cliques;
    co.check_hypotheses = !a.no_hypothesis_check;
    const CliqueResult r = scattering_to_sky_shadows(*m, d.scatter, co);
    std::vector<json> lines{report_header("shadows", d.header)};
    for (size_t i = 0; i < r.shadows.size(); ++i) {
      const auto& s = r.shadows[i];
      json vs = json::array();
      for (const auto& v : s.vectors) vs.push_back(json{{"x", vec_json(v.pv.x)}, {"v", vec_json(v.pv.v)}});
      json j{{"shadow_id", i}, {"size", s.members.size()}};
      if (s.point_id) j["point_id"] = *s.point_id;
      j["vectors"] = vs;
      lines.push_back(j);
    }
    write_lines(prefix + ".shadows.jsonl", lines);
    std::cout << "  scatter: " << d.scatter.size() << " pairs, " << r.universe << " distinct vectors, "
              << r.shadows.size() << " maximal cliques\n";
    std::cout << "wrote " << prefix << ".shadows.jsonl\n";
  }
  if (!d.shadows.empty()) {
    if (!a.no_hypothesis_check) check_lightlike_hypotheses(*m, a.cliques.hypotheses);
    const auto pairs = build_conformal_map(*m, *m, d.shadows, a.conformal);
    std::vector<json> lines{report_header("shadow_points", d.header)};
    double worst = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
      json j{{"shadow_id", i}, {"position", vec_json(pairs[i].p1)}, {"spread", pairs[i].spread}};
      if (pairs[i].point_id) j["point_id"] = *pairs[i].point_id;
      lines.push_back(j);
      worst = std::max(worst, pairs[i].spread);
    }
    write_lines(prefix + ".points.jsonl", lines);
    std::cout << "  shadow: " << d.shadows.size() << " shadows mapped to points, max fiber spread " << worst << "\n";
    std::cout << "wrote " << prefix << ".points.jsonl\n";
  }
  return code;
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
  std::string data;
  std::string model2;
  std::string params2;
  std::string out;
  ConformalOptions conformal{};
  CliqueOptions cliques{};
};

int cmd_compare(const CompareArgs& a) {
  const Dataset d = load_dataset(a.data);
  const ModelPtr m1 = model_of(d.header);
  ModelParams p2 = parse_params(a.params2);
  if (!p2.count("n")) p2["n"] = m1->dim();
  const ModelPtr m2 = make_model(a.model2, p2);

  std::vector<SkyShadowSample> shadows = d.shadows;
  if (shadows.empty() && !d.scatter.empty()) {
    CliqueOptions co = a.cliques;
    const CliqueResult r = scattering_to_sky_shadows(*m1, d.scatter, co);
    for (const auto& s : r.shadows) {
      SkyShadowSample ss;
      ss.point_id = s.point_id;
      for (const auto& v : s.vectors) ss.vectors.push_back({v, std::nullopt});
      shadows.push_back(std::move(ss));
    }
  }
  if (shadows.empty()) throw Error(ErrorKind::data_inconsistency, "compare needs shadow or scatter records");

  std::cout << "compare " << m1->name() << " -> " << m2->name() << ", " << shadows.size() << " shadows\n";
  std::vector<MatchedPair> pairs;
  try {
    pairs = build_conformal_map(*m1, *m2, shadows, a.conformal);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::not_well_defined) std::cout << "FAIL " << e.what() << "\n";
    throw;
  }
  std::vector<json> lines;
  json head = report_header("pairs", d.header);
  head["model2"] = m2->name();
  json p2j = json::object();
  for (const auto& [k, v] : m2->params()) p2j[k] = v;
  head["params2"] = p2j;
  lines.push_back(head);
  double mean = 0.0, spread = 0.0, fmin = std::numeric_limits<double>::infinity(), fmax = -fmin;
  for (const auto& p : pairs) {
    json j{{"p1", vec_json(p.p1)}, {"p2", vec_json(p.p2)}, {"factor", p.factor}, {"spread", p.spread}};
    if (p.point_id) j["point_id"] = *p.point_id;
    lines.push_back(j);
    mean += p.factor;
    spread = std::max(spread, p.spread);
    fmin = std::min(fmin, p.factor);
    fmax = std::max(fmax, p.factor);
  }
  mean /= static_cast<double>(pairs.size());
  const std::string out = a.out.empty() ? default_prefix(a.data) + ".pairs.jsonl" : a.out;
  write_lines(out, lines);
  std::cout << "  factor mean " << mean << ", range [" << fmin << ", " << fmax << "], max spread " << spread << "\n";
  std::cout << "wrote " << out << "\n";
  std::cout << (spread <= a.conformal.map_tol ? "PASS" : "FAIL") << " (map_tol " << a.conformal.map_tol << ")\n";
  return spread <= a.conformal.map_tol ? Exit::ok : Exit::conflict;
}

// ---------------------------------------------------------------------------
// plotdata

int cmd_plotdata(const std::string& report, const std::string& out) {
  const auto lines = read_lines(report);
  if (lines.empty() || !lines[0].contains("report"))
    throw Error(ErrorKind::parse, "schema mismatch: first line is not a report header");
  const std::string kind = lines[0]["report"];
  const int n = lines[0].value("n", 0);
  std::ostringstream os;
  os.precision(17);
  const auto coords = [](const json& v) {
    std::ostringstream c;
    c.precision(17);
    for (const auto& x : v) c << ',' << x.get<double>();
    return c.str();
  };
  const auto names = [&](const std::string& p) {
    std::string s;
    for (int i = 1; i <= n; ++i) s += "," + p + std::to_string(i);
    return s;
  };
  try {
    if (kind == "groups") {
      os << "label" << names("x") << "\n";
      for (size_t i = 1; i < lines.size(); ++i) {
        if (!lines[i].contains("label") || lines[i]["position"].is_null()) continue;
        os << lines[i]["label"].get<int>() << coords(lines[i]["position"]) << "\n";
      }
    } else if (kind == "shadows") {
      os << "shadow_id" << names("x") << names("v") << "\n";
      for (size_t i = 1; i < lines.size(); ++i)
        for (const auto& v : lines[i].at("vectors")) {
          os << lines[i]["shadow_id"].get<int>() << coords(v.at("x")) << coords(v.at("v")) << "\n";
        }
    } else if (kind == "shadow_points") {
      os << "shadow_id" << names("x") << ",spread\n";
      for (size_t i = 1; i < lines.size(); ++i) {
        os << lines[i].at("shadow_id").get<int>() << coords(lines[i].at("position")) << ','
           << lines[i].at("spread").get<double>() << "\n";
      }
    } else if (kind == "pairs") {
      os << names("p1_").substr(1) << names("p2_") << ",factor\n";
      for (size_t i = 1; i < lines.size(); ++i) {
        os << coords(lines[i].at("p1")).substr(1) << coords(lines[i].at("p2")) << ','
           << lines[i].at("factor").get<double>() << "\n";
      }
    } else {
      throw Error(ErrorKind::parse, "schema mismatch: unknown report kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("schema mismatch: ") + e.what());
  }
  if (out.empty() || out == "-") {
    std::cout << os.str();
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw Error(ErrorKind::io, "cannot open '" + out + "' for writing");
    f << os.str();
    if (!f) throw Error(ErrorKind::io, "write to '" + out + "' failed");
  }
  return Exit::ok;
}

// ---------------------------------------------------------------------------
// selftest

int cmd_selftest(const SelftestOptions& opt, const std::vector<std::string>& filters) {
  int failed = 0;
  double total = 0.0;
  const auto results = run_selftest(opt, filters, [&](const CheckResult& r) {
    std::printf("%-4s %-40s worst %.3g (tol %.3g) %6.2fs  %s\n", r.ok ? "PASS" : "FAIL", r.name.c_str(), r.worst,
                r.tol, r.seconds, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.ok;
    total += r.seconds;
  });
  if (results.empty()) throw Error(ErrorKind::config, "no selftest check matches the filter");
  std::printf("%zu checks, %d failed, %.2fs\n", results.size(), failed, total);
  return failed ? Exit::selftest_failed : Exit::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-data reconstruction on model Lorentzian manifolds"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; command-line flags take precedence");

  // generate
  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate boundary data from hidden interior points");
  gen->add_option("--model", ga.model, "minkowski-block | conformal-flat | cylinder")->capture_default_str();
  gen->add_option("--n", ga.n, "dimension");
  gen->add_option("--L", ga.L, "block side");
  gen->add_option("--T", ga.T, "cylinder height");
  gen->add_option("--c", ga.c, "conformal slope (Omega = 1 + c x_axis)");
  gen->add_option("--axis", ga.axis, "conformal axis");
  gen->add_option("--params", ga.params, "extra model parameters k=v,k=v");
  gen->add_option("--points", ga.points, "hidden interior points")->capture_default_str();
  gen->add_option("--fan", ga.fan, "fan size per point (timelike and lightlike)")->capture_default_str();
  gen->add_option("--fan-timelike", ga.fan_timelike, "timelike fan size");
  gen->add_option("--fan-lightlike", ga.fan_lightlike, "lightlike fan size");
  gen->add_option("--kinds", ga.kinds, "comma list of time_probe, lens, scatter, shadow")->capture_default_str();
  gen->add_option("--seed", ga.seed)->capture_default_str();
  gen->add_option("-o,--out", ga.out, "output file")->capture_default_str();
  gen->add_flag("--blind", ga.blind, "strip provenance and ladder indices");
  gen->add_flag("--weingarten", ga.weingarten, "attach null Weingarten maps to shadow vectors");
  gen->add_option("--ladder-depth", ga.ladder_depth)->capture_default_str();
  gen->add_option("--ladder-start", ga.ladder_start)->capture_default_str();
  gen->add_option("--min-rapidity", ga.min_rapidity)->capture_default_str();
  gen->add_option("--max-rapidity", ga.max_rapidity)->capture_default_str();
  gen->add_option("--jitter", ga.jitter)->capture_default_str();

  // reconstruct
  ReconstructArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct points, metrics and shadows from a data file");
  rec->add_option("data", ra.data, "data file")->required();
  rec->add_option("-o,--out", ra.out, "report prefix (default: data path without extension)");
  rec->add_option("--match-tol", ra.recon.match_tol)->capture_default_str();
  rec->add_option("--length-tol", ra.recon.length_tol)->capture_default_str();
  rec->add_option("--knn", ra.recon.knn)->capture_default_str();
  rec->add_option("--merge-factor", ra.recon.merge_factor)->capture_default_str();
  rec->add_option("--fit-tol", ra.recon.fit_tol)->capture_default_str();
  rec->add_flag("--chart-aware,!--no-chart-aware", ra.recon.chart_aware, "recover tangent fans in the chart");
  rec->add_option("--ladder-tol", ra.lens.ladder_tol)->capture_default_str();
  rec->add_option("--limit-tol", ra.lens.limit_tol)->capture_default_str();
  rec->add_option("--min-rungs", ra.lens.min_rungs)->capture_default_str();
  rec->add_option("--vector-tol", ra.cliques.match_tol)->capture_default_str();
  rec->add_option("--map-tol", ra.conformal.map_tol)->capture_default_str();
  rec->add_flag("--no-hypothesis-check", ra.no_hypothesis_check, "skip the refocusing check");

  // compare
  CompareArgs ca;
  auto* cmp = app.add_subcommand("compare", "Build the conformal map between the data's model and a second model");
  cmp->add_option("data", ca.data, "data file with shadow or scatter records")->required();
  cmp->add_option("--model2", ca.model2, "second model name")->required();
  cmp->add_option("--params2", ca.params2, "second model parameters k=v,k=v");
  cmp->add_option("-o,--out", ca.out, "pairs report (default: <data>.pairs.jsonl)");
  cmp->add_option("--map-tol", ca.conformal.map_tol)->capture_default_str();
  cmp->add_option("--vector-tol", ca.cliques.match_tol)->capture_default_str();

  // plotdata
  std::string plot_in, plot_out;
  auto* plot = app.add_subcommand("plotdata", "Flatten a report into CSV");
  plot->add_option("report", plot_in, "groups, shadows, points or pairs report")->required();
  plot->add_option("-o,--out", plot_out, "CSV path (default: stdout)");

  // selftest
  SelftestOptions so;
  std::string filters;
  auto* st = app.add_subcommand("selftest", "Run the invariant checks");
  st->add_option("--filter", filters, "comma list of check-name prefixes");
  st->add_option("--seed", so.seed)->capture_default_str();
  st->add_option("--metric-points", so.metric_points)->capture_default_str();
  st->add_option("--geodesics", so.geodesics)->capture_default_str();

  // splice config values in front of the command-line flags
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::string cfg;
    for (size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
    }
    if (!cfg.empty()) {
      const auto extra = config_arguments(cfg);
      auto at = std::find_if(args.begin(), args.end(), [](const std::string& s) {
        return s == "generate" || s == "reconstruct" || s == "compare" || s == "plotdata" || s == "selftest";
      });
      if (at == args.end()) throw Error(ErrorKind::config, "no subcommand given");
      args.insert(at + 1, extra.begin(), extra.end());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  }
  std::reverse(args.begin(), args.end());  // CLI11 takes the vector in reverse order

  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? Exit::ok : Exit::config;
  }

  try {
    if (*gen) return cmd_generate(ga);
    if (*rec) return cmd_reconstruct(ra);
    if (*cmp) return cmd_compare(ca);
    if (*plot) return cmd_plotdata(plot_in, plot_out);
    if (*st) return cmd_selftest(so, split(filters, ','));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::data;
  }
  return Exit::ok;
}
