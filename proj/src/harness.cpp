#include "sgunlearn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sgunlearn/errors.hpp"

namespace sgu {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void bad_line(long line, const std::string& what) {
  throw ParseError("config line " + std::to_string(line) + ": " + what);
}

double parse_num(const std::string& v, long line) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) bad_line(line, "trailing characters in number '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    bad_line(line, "expected a number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_line(line, "number out of range '" + v + "'");
  }
}

long parse_int(const std::string& v, long line) {
  try {
    std::size_t pos = 0;
    long n = std::stol(v, &pos);
    if (pos != v.size()) bad_line(line, "trailing characters in integer '" + v + "'");
    return n;
  } catch (const std::invalid_argument&) {
    bad_line(line, "expected an integer, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_line(line, "integer out of range '" + v + "'");
  }
}

std::uint64_t parse_seed(const std::string& v, long line) {
  try {
    std::size_t pos = 0;
    unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) bad_line(line, "trailing characters in seed '" + v + "'");
    return static_cast<std::uint64_t>(n);
  } catch (const std::invalid_argument&) {
    bad_line(line, "expected a seed, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_line(line, "seed out of range '" + v + "'");
  }
}

std::vector<long> parse_int_list(const std::string& v, long line) {
  std::vector<long> out;
  if (trim(v).empty()) return out;
  for (const std::string& part : split_on(v, ',')) out.push_back(parse_int(trim(part), line));
  return out;
}

std::vector<std::pair<long, double>> parse_milestones(const std::string& v, long line) {
  std::vector<std::pair<long, double>> out;
  if (trim(v).empty()) return out;
  for (const std::string& part : split_on(v, ',')) {
    auto bits = split_on(trim(part), ':');
    if (bits.size() != 2) bad_line(line, "milestone must be epoch:multiplier, got '" + part + "'");
    out.emplace_back(parse_int(trim(bits[0]), line), parse_num(trim(bits[1]), line));
  }
  return out;
}

// Each method starts from its published schedule; [method] keys in the config
// override individual fields on top of it. Retrain reuses the [model] schedule
// and iu takes no gradient steps, so their entries here are inert.
TrainConfig default_steps_for(const std::string& name) {
  if (name == "sg") return sg_default_schedule();
  TrainConfig t;
  t.epochs = 10;  // l1, rl
  if (name == "ft") {
    t.lr = 5e-2;
    t.epochs = 30;
  } else if (name == "ga") {
    t.lr = 1e-3;
    t.epochs = 5;
  }
  return t;
}

std::string fnv1a64_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_g(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

std::string format_full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"retrain", "sg", "ft", "ga", "rl", "l1", "iu"};
  return names;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path.string());
  out << text;
  if (!out) throw ContractError("short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json metrics_to_json(const MetricsReport& m) {
  json j = json::object();
  for (const auto& [name, member] : kMetricFields) j[name] = m.*member;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  for (const auto& [name, member] : kMetricFields) m.*member = j.at(name).get<double>();
  return m;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  bool saw_header = false;
  std::string section;
  struct Pair {
    std::string section, key, value;
    long line;
  };
  std::vector<Pair> pairs;
  std::set<std::string> seen_keys;

  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (!saw_header) {
      if (t != "sgunlearn-config v1")
        bad_line(lineno, "expected header 'sgunlearn-config v1', got '" + t + "'");
      saw_header = true;
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']') bad_line(lineno, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) bad_line(lineno, "empty section name");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) bad_line(lineno, "expected key = value");
    if (section.empty()) bad_line(lineno, "key before any [section]");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) bad_line(lineno, "empty key");
    std::string full = section + "." + key;
    if (!seen_keys.insert(full).second) bad_line(lineno, "duplicate key '" + full + "'");
    pairs.push_back({section, key, value, lineno});
  }
  if (!saw_header) throw ParseError("config: missing 'sgunlearn-config v1' header");

  ExperimentConfig cfg;
  bool saw_audit_family = false;
  bool saw_seeds = false;

  // Resolve the method name first so its schedule defaults are in place
  // before any [method] override is applied.
  for (const Pair& p : pairs) {
    if (p.section != "method" || p.key != "name") continue;
    const auto& names = method_names();
    if (std::find(names.begin(), names.end(), p.value) == names.end())
      throw ContractError("config: unknown method '" + p.value + "'");
    cfg.method.name = p.value;
  }
  cfg.method.steps = default_steps_for(cfg.method.name);

  for (const Pair& p : pairs) {
    const std::string& k = p.key;
    const std::string& v = p.value;
    const long ln = p.line;
    if (p.section == "dataset") {
      if (k == "classes") cfg.dataset.classes = parse_int(v, ln);
      else if (k == "per_class") cfg.dataset.per_class = parse_int(v, ln);
      else if (k == "dim") cfg.dataset.dim = parse_int(v, ln);
      else if (k == "separation") cfg.dataset.separation = parse_num(v, ln);
      else if (k == "csv") cfg.dataset.csv = v;
      else throw ContractError("config: unknown key dataset." + k);
    } else if (p.section == "model") {
      if (k == "hidden") cfg.hidden = parse_int_list(v, ln);
      else if (k == "lr") cfg.train.lr = parse_num(v, ln);
      else if (k == "momentum") cfg.train.momentum = parse_num(v, ln);
      else if (k == "weight_decay") cfg.train.weight_decay = parse_num(v, ln);
      else if (k == "epochs") cfg.train.epochs = parse_int(v, ln);
      else if (k == "batch_size") cfg.train.batch_size = parse_int(v, ln);
      else if (k == "milestones") cfg.train.lr_milestones = parse_milestones(v, ln);
      else throw ContractError("config: unknown key model." + k);
    } else if (p.section == "forget") {
      if (k == "mode") {
        if (v == "random") cfg.forget.mode = ForgetMode::kRandom;
        else if (v == "classwise") cfg.forget.mode = ForgetMode::kClasswise;
        else throw ContractError("config: forget.mode must be random or classwise, got '" + v + "'");
      } else if (k == "ratio") cfg.forget.ratio = parse_num(v, ln);
      else if (k == "class") cfg.forget.forget_class = parse_int(v, ln);
      else throw ContractError("config: unknown key forget." + k);
    } else if (p.section == "method") {
      if (k == "name") cfg.method.name = v;
      else if (k == "alpha") cfg.method.alpha = parse_num(v, ln);
      else if (k == "lr") cfg.method.steps.lr = parse_num(v, ln);
      else if (k == "epochs") cfg.method.steps.epochs = parse_int(v, ln);
      else if (k == "momentum") cfg.method.steps.momentum = parse_num(v, ln);
      else if (k == "weight_decay") cfg.method.steps.weight_decay = parse_num(v, ln);
      else if (k == "batch_size") cfg.method.steps.batch_size = parse_int(v, ln);
      else if (k == "milestones") cfg.method.steps.lr_milestones = parse_milestones(v, ln);
      else if (k == "family") cfg.method.family = attack_family_from_name(v);
      else if (k == "reg") cfg.method.attack_reg = parse_num(v, ln);
      else if (k == "tol") cfg.method.attack_tol = parse_num(v, ln);
      else if (k == "feature_mode") cfg.method.feature_mode = feature_mode_from_name(v);
      else if (k == "gamma") cfg.method.gamma = parse_num(v, ln);
      else if (k == "damping") cfg.method.iu.damping = parse_num(v, ln);
      else if (k == "cg_iters") cfg.method.iu.cg_iters = parse_int(v, ln);
      else if (k == "residual_tol") cfg.method.iu.residual_tol = parse_num(v, ln);
      else if (k == "step_scale") cfg.method.iu.step_scale = parse_num(v, ln);
      else throw ContractError("config: unknown key method." + k);
    } else if (p.section == "audit") {
      if (k == "family") { cfg.audit.family = attack_family_from_name(v); saw_audit_family = true; }
      else if (k == "reg") cfg.audit.reg = parse_num(v, ln);
      else if (k == "feature_mode") cfg.audit.mode = feature_mode_from_name(v);
      else if (k == "k_folds") cfg.audit.k_folds = parse_int(v, ln);
      else throw ContractError("config: unknown key audit." + k);
    } else if (p.section == "run") {
      if (k == "seeds") {
        cfg.seeds.clear();
        for (const std::string& part : split_on(v, ','))
          cfg.seeds.push_back(parse_seed(trim(part), ln));
        saw_seeds = true;
      } else if (k == "output_dir") cfg.output_dir = v;
      else throw ContractError("config: unknown key run." + k);
    } else {
      throw ContractError("config: unknown section [" + p.section + "]");
    }
  }

  // Post-hoc audits measure with the same attacker family the method trained
  // against unless the config picks a different one.
  if (!saw_audit_family) cfg.audit.family = cfg.method.family;

  if (saw_seeds && cfg.seeds.empty()) throw ContractError("config: run.seeds is empty");
  std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
  if (uniq.size() != cfg.seeds.size()) throw ContractError("config: run.seeds has duplicates");
  if (cfg.audit.k_folds < 2) throw ContractError("config: audit.k_folds must be at least 2");

  // Digest over the sorted canonical pairs, so line and section order in the
  // source text does not matter.
  std::vector<std::string> canon;
  canon.reserve(pairs.size() + 1);
  canon.push_back("format=sgunlearn-config v1");
  for (const Pair& p : pairs) canon.push_back(p.section + "." + p.key + "=" + p.value);
  std::sort(canon.begin(), canon.end());
  std::string joined;
  for (const std::string& c : canon) {
    joined += c;
    joined += '\n';
  }
  cfg.digest = fnv1a64_hex(joined);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig cfg = parse_config(read_text(path));
  if (const char* env = std::getenv(kOutputDirEnvVar); env != nullptr && *env != '\0')
    cfg.output_dir = env;
  return cfg;
}

std::string record_to_json(const RunRecord& record) {
  json j;
  j["config_digest"] = record.config_digest;
  j["method"] = record.method;
  j["alpha"] = record.alpha;
  j["seed"] = record.seed;
  j["metrics"] = metrics_to_json(record.metrics);
  json trace = json::array();
  for (const EpochTrace& t : record.trace)
    trace.push_back({{"retain_loss", t.retain_loss},
                     {"soft_utility", t.soft_utility},
                     {"seconds", t.seconds}});
  j["trace"] = trace;
  json reports = json::array();
  for (const MetricsReport& m : record.epoch_reports) reports.push_back(metrics_to_json(m));
  j["epoch_reports"] = reports;
  j["forget_losses"] = record.forget_losses;
  j["test_losses"] = record.test_losses;
  j["wall_clock_s"] = record.wall_clock_s;
  return j.dump(2) + "\n";
}

RunRecord record_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("record: malformed JSON");
  try {
    RunRecord r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics = metrics_from_json(j.at("metrics"));
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    if (auto it = j.find("trace"); it != j.end()) {
      for (const json& t : *it) {
        EpochTrace e;
        e.retain_loss = t.at("retain_loss").get<double>();
        e.soft_utility = t.at("soft_utility").get<double>();
        e.seconds = t.at("seconds").get<double>();
        r.trace.push_back(e);
      }
    }
    if (auto it = j.find("epoch_reports"); it != j.end())
      for (const json& m : *it) r.epoch_reports.push_back(metrics_from_json(m));
    if (auto it = j.find("forget_losses"); it != j.end())
      r.forget_losses = it->get<std::vector<double>>();
    if (auto it = j.find("test_losses"); it != j.end())
      r.test_losses = it->get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("record: ") + e.what());
  }
}

std::filesystem::path record_path(const std::filesystem::path& dir, const RunRecord& record) {
  std::string name = "record_" + record.method;
  if (record.method == "sg") name += "_a" + format_g(record.alpha);
  name += "_seed" + std::to_string(record.seed) + "_" + record.config_digest + ".json";
  return dir / name;
}

DatasetBundle make_bundle(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.dataset.csv.empty()) return load_csv(cfg.dataset.csv);
  return gen_gaussian_mixture(cfg.dataset.classes, cfg.dataset.per_class, cfg.dataset.dim,
                              cfg.dataset.separation, seed);
}

ForgetPartition make_partition(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               std::uint64_t seed) {
  if (cfg.forget.mode == ForgetMode::kClasswise)
    return split_forget_classwise(bundle, cfg.forget.forget_class, seed);
  return split_forget_random(bundle, cfg.forget.ratio, seed);
}

ModelCheckpoint train_original(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               std::uint64_t seed) {
  MlpSpec spec;
  spec.layer_dims.push_back(bundle.dim());
  for (long h : cfg.hidden) spec.layer_dims.push_back(h);
  spec.layer_dims.push_back(bundle.num_classes);
  spec.seed = seed;
  const auto rows = bundle.rows_in(Split::kTrain);
  ModelCheckpoint ckpt =
      train(bundle.features.take_rows(rows), take(bundle.labels, rows), spec, cfg.train);
  ckpt.config_digest = cfg.digest;
  return ckpt;
}

namespace {

SgConfig sg_config_for(const ExperimentConfig& cfg, double alpha, std::uint64_t seed) {
  SgConfig sc;
  sc.alpha = alpha;
  sc.train = cfg.method.steps;
  sc.family = cfg.method.family;
  sc.attack_reg = cfg.method.attack_reg;
  sc.attack_tol = cfg.method.attack_tol;
  sc.mode = cfg.method.feature_mode;
  sc.seed = seed;
  return sc;
}

void attach_losses(RunRecord& rec, const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                   const ForgetPartition& partition) {
  const auto& f = partition.forget_indices;
  rec.forget_losses = per_row_ce(ckpt, bundle.features.take_rows(f), take(bundle.labels, f));
  const auto t = bundle.rows_in(Split::kTestAudit);
  rec.test_losses = per_row_ce(ckpt, bundle.features.take_rows(t), take(bundle.labels, t));
}

}  // namespace

RunRecord run_method(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                     const ForgetPartition& partition, const ModelCheckpoint& orig,
                     const std::string& method, std::uint64_t seed, ModelCheckpoint* out_ckpt) {
  using clock = std::chrono::steady_clock;
  RunRecord rec;
  rec.config_digest = cfg.digest;
  rec.method = method;
  rec.seed = seed;

  const auto t0 = clock::now();
  ModelCheckpoint out;
  if (method == "sg") {
    rec.alpha = cfg.method.alpha;
    UnlearnResult res = sg_unlearn(orig, bundle, partition, sg_config_for(cfg, rec.alpha, seed));
    out = std::move(res.ckpt);
    rec.trace = std::move(res.trace);
  } else if (method == "retrain") {
    MlpSpec spec = orig.spec;
    spec.seed = seed;
    out = retrain(bundle, partition, spec, cfg.train, seed);
  } else if (method == "ft") {
    out = fine_tune(orig, bundle, partition, cfg.method.steps);
  } else if (method == "ga") {
    out = gradient_ascent(orig, bundle, partition, cfg.method.steps);
  } else if (method == "rl") {
    out = random_label(orig, bundle, partition, cfg.method.steps, seed);
  } else if (method == "l1") {
    out = l1_sparse(orig, bundle, partition, cfg.method.steps, cfg.method.gamma);
  } else if (method == "iu") {
    out = influence_unlearn(orig, bundle, partition, cfg.method.iu);
  } else {
    throw ContractError("run_method: unknown method '" + method + "'");
  }
  const double method_s = std::chrono::duration<double>(clock::now() - t0).count();

  rec.metrics = assemble_report(out, bundle, partition, cfg.audit, seed, method_s);
  attach_losses(rec, out, bundle, partition);
  rec.wall_clock_s = std::chrono::duration<double>(clock::now() - t0).count();
  if (out_ckpt != nullptr) *out_ckpt = std::move(out);
  return rec;
}

RunRecord run_sg_with_epoch_reports(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                    const ForgetPartition& partition, const ModelCheckpoint& orig,
                                    double alpha, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  RunRecord rec;
  rec.config_digest = cfg.digest;
  rec.method = "sg";
  rec.alpha = alpha;
  rec.seed = seed;
  rec.epoch_reports.push_back(assemble_report(orig, bundle, partition, cfg.audit, seed));

  double eval_s = 0.0;
  EpochHook hook = [&](long, const ModelCheckpoint& ckpt) {
    const auto h0 = clock::now();
    rec.epoch_reports.push_back(assemble_report(ckpt, bundle, partition, cfg.audit, seed));
    eval_s += std::chrono::duration<double>(clock::now() - h0).count();
  };

  const auto t0 = clock::now();
  UnlearnResult res = sg_unlearn(orig, bundle, partition, sg_config_for(cfg, alpha, seed), hook);
  const double total_s = std::chrono::duration<double>(clock::now() - t0).count();
  rec.trace = std::move(res.trace);
  rec.metrics = assemble_report(res.ckpt, bundle, partition, cfg.audit, seed, total_s - eval_s);
  attach_losses(rec, res.ckpt, bundle, partition);
  rec.wall_clock_s = total_s;
  return rec;
}

double hyperparam_score(const ModelCheckpoint& ckpt, const DatasetBundle& bundle,
                        const ForgetPartition& partition, const AuditConfig& audit_cfg,
                        std::uint64_t seed) {
  const auto val_rows = bundle.rows_in(Split::kVal);
  AuditSet audit = build_audit_set_from_rows(ckpt, bundle, partition.forget_indices, val_rows,
                                             audit_cfg.mode, seed);
  MiaMetrics mia = cv_mia_metrics(audit, audit_cfg.k_folds, audit_cfg.family, audit_cfg.reg, seed);
  double val_acc =
      evaluate(ckpt, bundle.features.take_rows(val_rows), take(bundle.labels, val_rows));
  return val_acc - mia.accuracy;
}

std::size_t select_best_index(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("select_best_index: empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::size_t select_hyperparams(const ModelCheckpoint& orig, const DatasetBundle& bundle,
                               const ForgetPartition& partition, const std::vector<SgConfig>& grid,
                               const AuditConfig& audit_cfg, std::uint64_t seed) {
  if (grid.empty()) throw ContractError("select_hyperparams: empty grid");
  std::vector<double> scores;
  scores.reserve(grid.size());
  for (const SgConfig& point : grid) {
    SgConfig cfg = point;
    cfg.seed = seed;
    UnlearnResult res = sg_unlearn(orig, bundle, partition, cfg);
    scores.push_back(hyperparam_score(res.ckpt, bundle, partition, audit_cfg, seed));
  }
  return select_best_index(scores);
}

std::filesystem::path emit_plot_data(const std::vector<RunRecord>& records, PlotKind kind,
                                     const std::filesystem::path& out_dir) {
  if (records.empty()) throw ContractError("emit_plot_data: no records");
  std::filesystem::create_directories(out_dir);

  if (kind == PlotKind::kAblation) {
    const std::size_t len = records[0].epoch_reports.size();
    if (len == 0) throw ContractError("emit_plot_data: ablation records lack epoch reports");
    for (const RunRecord& r : records) {
      if (r.epoch_reports.size() != len)
        throw ContractError("emit_plot_data: epoch report lengths differ across records");
      if (r.alpha != records[0].alpha)
        throw ContractError("emit_plot_data: ablation records mix alphas");
    }
    std::ostringstream csv;
    csv << "epoch,defender_utility,acc_te,mia_acc,w_dist\n";
    const double n = static_cast<double>(records.size());
    for (std::size_t e = 0; e < len; ++e) {
      double acc_te = 0.0, mia = 0.0, w = 0.0;
      for (const RunRecord& r : records) {
        acc_te += r.epoch_reports[e].acc_te;
        mia += r.epoch_reports[e].mia_acc;
        w += r.epoch_reports[e].w_dist;
      }
      acc_te /= n;
      mia /= n;
      w /= n;
      csv << e << ',' << format_full(acc_te - mia) << ',' << format_full(acc_te) << ','
          << format_full(mia) << ',' << format_full(w) << '\n';
    }
    const auto path = out_dir / ("ablation_a" + format_g(records[0].alpha) + ".csv");
    write_text(path, csv.str());
    return path;
  }

  if (kind == PlotKind::kAlphaSweep) {
    std::map<double, std::vector<const RunRecord*>> by_alpha;
    for (const RunRecord& r : records) by_alpha[r.alpha].push_back(&r);
    std::ostringstream csv;
    csv << "alpha,n";
    for (const auto& [name, member] : kMetricFields) csv << ',' << name;
    csv << '\n';
    for (const auto& [alpha, group] : by_alpha) {
      csv << format_g(alpha) << ',' << group.size();
      for (const auto& [name, member] : kMetricFields) {
        double s = 0.0;
        for (const RunRecord* r : group) s += r->metrics.*member;
        csv << ',' << format_full(s / static_cast<double>(group.size()));
      }
      csv << '\n';
    }
    const auto path = out_dir / "alpha_sweep.csv";
    write_text(path, csv.str());
    return path;
  }

  // Loss histogram over the pooled per-row CE losses, binned uniformly in
  // log10 so the long right tail stays resolved.
  std::vector<double> forget, test;
  for (const RunRecord& r : records) {
    forget.insert(forget.end(), r.forget_losses.begin(), r.forget_losses.end());
    test.insert(test.end(), r.test_losses.begin(), r.test_losses.end());
  }
  if (forget.empty() && test.empty())
    throw ContractError("emit_plot_data: records carry no per-row losses");
  const double floor_loss = 1e-12;
  auto log_of = [floor_loss](double x) { return std::log10(std::max(x, floor_loss)); };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : forget) {
    lo = std::min(lo, log_of(x));
    hi = std::max(hi, log_of(x));
  }
  for (double x : test) {
    lo = std::min(lo, log_of(x));
    hi = std::max(hi, log_of(x));
  }
  const long bins = 30;
  const double width = (hi > lo) ? (hi - lo) / static_cast<double>(bins) : 1.0;
  auto bin_of = [&](double x) {
    long b = static_cast<long>(std::floor((log_of(x) - lo) / width));
    return std::clamp(b, 0L, bins - 1);
  };
  std::vector<long> fc(bins, 0), tc(bins, 0);
  for (double x : forget) ++fc[bin_of(x)];
  for (double x : test) ++tc[bin_of(x)];
  std::ostringstream csv;
  csv << "bin_lo,bin_hi,forget_count,test_count\n";
  for (long b = 0; b < bins; ++b) {
    csv << format_full(std::pow(10.0, lo + width * b)) << ','
        << format_full(std::pow(10.0, lo + width * (b + 1))) << ',' << fc[b] << ',' << tc[b]
        << '\n';
  }
  const auto path = out_dir / "loss_hist.csv";
  write_text(path, csv.str());
  return path;
}

std::vector<Aggregate> aggregate_records(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ContractError("aggregate_records: no records");
  auto rank = [](const std::string& m) {
    const auto& names = method_names();
    auto it = std::find(names.begin(), names.end(), m);
    return it == names.end() ? names.size() : static_cast<std::size_t>(it - names.begin());
  };
  std::map<std::pair<std::size_t, double>, std::vector<const RunRecord*>> groups;
  std::map<std::pair<std::size_t, double>, std::string> labels;
  std::set<std::string> multi_alpha;
  {
    std::map<std::string, std::set<double>> alphas;
    for (const RunRecord& r : records) alphas[r.method].insert(r.alpha);
    for (const auto& [m, a] : alphas)
      if (a.size() > 1) multi_alpha.insert(m);
  }
  for (const RunRecord& r : records) {
    auto key = std::make_pair(rank(r.method), r.alpha);
    groups[key].push_back(&r);
    labels[key] = multi_alpha.count(r.method) ? r.method + "_a" + format_g(r.alpha) : r.method;
  }
  std::vector<Aggregate> out;
  for (const auto& [key, group] : groups) {
    Aggregate agg;
    agg.label = labels[key];
    agg.alpha = key.second;
    agg.n = static_cast<long>(group.size());
    for (const auto& [name, member] : kMetricFields) {
      std::vector<double> xs;
      xs.reserve(group.size());
      for (const RunRecord* r : group) xs.push_back(r->metrics.*member);
      const double m = mean_of(xs);
      agg.mean.*member = m;
      agg.stddev.*member = sample_std(xs, m);
    }
    out.push_back(std::move(agg));
  }
  return out;
}

std::string report_csv(const std::vector<Aggregate>& rows) {
  std::ostringstream csv;
  csv << "method,alpha,n";
  for (const auto& [name, member] : kMetricFields) csv << ',' << name << "_mean," << name << "_std";
  csv << '\n';
  for (const Aggregate& a : rows) {
    csv << a.label << ',' << format_g(a.alpha) << ',' << a.n;
    for (const auto& [name, member] : kMetricFields)
      csv << ',' << format_full(a.mean.*member) << ',' << format_full(a.stddev.*member);
    csv << '\n';
  }
  return csv.str();
}

std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
  std::vector<RunRecord> out;
  if (!std::filesystem::is_directory(dir)) throw ContractError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("record_", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(record_from_json(read_text(f)));
  return out;
}

}  // namespace sgu
