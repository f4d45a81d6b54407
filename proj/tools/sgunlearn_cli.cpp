#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "sgunlearn/errors.hpp"
#include "sgunlearn/harness.hpp"
#include "sgunlearn/rng.hpp"

namespace fs = std::filesystem;
using namespace sgu;

namespace {

std::string fmt4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::string alpha_tag(double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) throw ContractError("empty entry in alpha list '" + text + "'");
    std::size_t pos = 0;
    double a = 0.0;
    try {
      a = std::stod(cur, &pos);
    } catch (const std::exception&) {
      throw ContractError("bad alpha '" + cur + "'");
    }
    if (pos != cur.size()) throw ContractError("bad alpha '" + cur + "'");
    out.push_back(a);
    cur.clear();
  };
  for (char c : text) {
    if (c == ',') flush();
    else if (c != ' ') cur += c;
  }
  flush();
  if (out.empty()) throw ContractError("empty alpha list");
  return out;
}

fs::path orig_ckpt_path(const fs::path& out, const ExperimentConfig& cfg, std::uint64_t seed) {
  return out / ("orig_seed" + std::to_string(seed) + "_" + cfg.digest + ".ckpt");
}

fs::path unlearned_ckpt_path(const fs::path& out, const ExperimentConfig& cfg,
                             const std::string& method, std::uint64_t seed) {
  return out / ("unlearned_" + method + "_seed" + std::to_string(seed) + "_" + cfg.digest +
                ".ckpt");
}

// Trains the original model once per (config digest, seed) and caches it on
// disk; the digest in the file name invalidates the cache when the config
// changes.
ModelCheckpoint get_original(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                             std::uint64_t seed, const fs::path& out) {
  const fs::path path = orig_ckpt_path(out, cfg, seed);
  if (fs::exists(path)) return load_ckpt(path.string());
  ModelCheckpoint ckpt = train_original(cfg, bundle, seed);
  save_ckpt(ckpt, path.string());
  return ckpt;
}

void write_record(const fs::path& out, const RunRecord& rec) {
  const fs::path path = record_path(out, rec);
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write " + path.string());
  f << record_to_json(rec);
}

void print_record_line(const RunRecord& rec) {
  const MetricsReport& m = rec.metrics;
  std::cout << rec.method;
  if (rec.method == "sg") std::cout << "(alpha=" << alpha_tag(rec.alpha) << ")";
  std::cout << " seed=" << rec.seed << " acc_r=" << fmt4(m.acc_r) << " acc_te=" << fmt4(m.acc_te)
            << " acc_f=" << fmt4(m.acc_f) << " mia_acc=" << fmt4(m.mia_acc)
            << " w_dist=" << fmt4(m.w_dist) << " runtime=" << fmt4(m.runtime_s) << "s\n";
}

std::string metrics_json_text(const MetricsReport& m) {
  std::string j = "{";
  bool first = true;
  for (const auto& [name, member] : kMetricFields) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", m.*member);
    j += std::string(first ? "" : ", ") + "\"" + name + "\": " + buf;
    first = false;
  }
  return j + "}";
}

// ---------------------------------------------------------------------------
// selftest: quick built-in oracle and gradient checks.

void expect(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) throw NumericError("selftest " + name + ": " + detail);
  std::cout << "selftest: " << name << " ok\n";
}

double mean_ce_at(const MlpSpec& spec, const std::vector<double>& params, const Matrix& rows,
                  const std::vector<long>& labels) {
  ModelCheckpoint ck;
  ck.spec = spec;
  ck.params = params;
  const std::vector<double> losses = per_row_ce(ck, rows, labels);
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

void selftest_model_gradient() {
  MlpSpec spec;
  spec.layer_dims = {4, 8, 3};
  spec.seed = 7;
  std::vector<double> params = init_params(spec);
  Rng rng(11);
  Matrix rows(6, 4);
  for (double& v : rows.v) v = rng.normal();
  std::vector<long> labels;
  for (long i = 0; i < 6; ++i) labels.push_back(static_cast<long>(rng.uniform_int(3)));

  ad::Tape tape;
  TapedModel model = stage_params(tape, spec, params);
  ad::Tensor x({6, 4}, rows.v);
  ad::Tensor loss = ad::mean(ad::softmax_ce(mlp_logits(model, x), labels));
  tape.backward(loss);
  const std::vector<double> grad = flat_grad(model);

  double worst = 0.0;
  for (int probe = 0; probe < 25; ++probe) {
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(params.size()));
    const double h = 1e-6 * (1.0 + std::fabs(params[i]));
    std::vector<double> p = params;
    p[i] += h;
    const double up = mean_ce_at(spec, p, rows, labels);
    p[i] -= 2.0 * h;
    const double dn = mean_ce_at(spec, p, rows, labels);
    const double fd = (up - dn) / (2.0 * h);
    const double rel = std::fabs(fd - grad[i]) / std::max({1e-8, std::fabs(fd), std::fabs(grad[i])});
    worst = std::max(worst, rel);
  }
  expect(worst < 1e-4, "model gradient vs finite differences",
         "worst relative error " + std::to_string(worst));
}

void selftest_attack_closed_form() {
  Matrix feats(2, 1);
  feats.v = {-1.0, 1.0};
  const std::vector<double> y = {-1.0, 1.0};
  const double c_reg = 1e4;
  const AttackSolution sol = solve_attack(feats, y, AttackFamily::kSqHinge, c_reg);
  const double w_star = 4.0 * c_reg / (1.0 + 4.0 * c_reg);
  expect(std::fabs(sol.w[0] - w_star) < 1e-9 && std::fabs(sol.b) < 1e-9,
         "attack solver closed form", "w=" + std::to_string(sol.w[0]));
}

void selftest_attack_optimality() {
  Rng rng(21);
  for (AttackFamily family : {AttackFamily::kSqHinge, AttackFamily::kLogistic}) {
    Matrix feats(40, 3);
    for (double& v : feats.v) v = rng.normal();
    std::vector<double> y;
    for (long i = 0; i < 40; ++i) y.push_back(i % 2 == 0 ? 1.0 : -1.0);
    const AttackSolution sol = solve_attack(feats, y, family, 1.0);
    bool ok = sol.grad_norm_at_solution <= 1e-8;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      std::vector<double> w = sol.w;
      for (double& wi : w) wi += 1e-3 * rng.normal();
      const double b = sol.b + 1e-3 * rng.normal();
      ok = attack_objective(feats, y, family, 1.0, w, b) >= sol.objective - 1e-12;
    }
    expect(ok, std::string("attack optimality (") + attack_family_name(family) + ")",
           "perturbation beat the solver or gradient too large");
  }
}

void selftest_ift_pullback() {
  Rng rng(31);
  Matrix tr(16, 2), val(16, 2);
  for (double& v : tr.v) v = rng.normal();
  for (double& v : val.v) v = rng.normal();
  std::vector<double> ytr, yval;
  for (long i = 0; i < 16; ++i) {
    ytr.push_back(i % 2 == 0 ? 1.0 : -1.0);
    yval.push_back(i % 2 == 0 ? 1.0 : -1.0);
  }
  const AttackFamily family = AttackFamily::kLogistic;
  const AttackSolution sol = solve_attack(tr, ytr, family, 1.0, 1e-12);
  const std::vector<double> upstream = utility_grad_wb(sol, val, yval);
  const Matrix grad = ift_feature_grad(sol, tr, ytr, upstream);

  double worst = 0.0;
  const double h = 1e-5;
  for (long probe = 0; probe < 3; ++probe) {
    const long i = static_cast<long>(rng.uniform_int(16)), j = static_cast<long>(rng.uniform_int(2));
    Matrix up = tr, dn = tr;
    up.at(i, j) += h;
    dn.at(i, j) -= h;
    const double u_up =
        attack_utility_soft(solve_attack(up, ytr, family, 1.0, 1e-12), val, yval);
    const double u_dn =
        attack_utility_soft(solve_attack(dn, ytr, family, 1.0, 1e-12), val, yval);
    const double fd = (u_up - u_dn) / (2.0 * h);
    const double rel =
        std::fabs(fd - grad.at(i, j)) / std::max({1e-6, std::fabs(fd), std::fabs(grad.at(i, j))});
    worst = std::max(worst, rel);
  }
  expect(worst < 1e-3, "implicit best-response gradient vs re-solve",
         "worst relative error " + std::to_string(worst));
}

void selftest_ks_oracle() {
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const long n = 3 + static_cast<long>(rng.uniform_int(38));
    const long m = 3 + static_cast<long>(rng.uniform_int(38));
    std::vector<double> a, b;
    for (long i = 0; i < n; ++i) a.push_back(std::floor(rng.normal() * 4.0) / 4.0);
    for (long i = 0; i < m; ++i) b.push_back(std::floor(rng.normal() * 4.0) / 4.0);
    const auto [stat, p] = ks_two_sample(a, b);
    double brute = 0.0;
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    for (double x : pooled) {
      double ca = 0.0, cb = 0.0;
      for (double v : a) ca += (v <= x) ? 1.0 : 0.0;
      for (double v : b) cb += (v <= x) ? 1.0 : 0.0;
      brute = std::max(brute, std::fabs(ca / static_cast<double>(n) - cb / static_cast<double>(m)));
    }
    if (std::fabs(stat - brute) > 1e-15 || p < 0.0 || p > 1.0)
      throw NumericError("selftest ks oracle: stat " + std::to_string(stat) + " vs brute " +
                         std::to_string(brute));
  }
  std::cout << "selftest: ks statistic vs brute force ok\n";
}

void selftest_wasserstein_identity() {
  Rng rng(51);
  for (int rep = 0; rep < 10; ++rep) {
    const long n = 2 + static_cast<long>(rng.uniform_int(30));
    std::vector<double> a, b;
    for (long i = 0; i < n; ++i) {
      a.push_back(rng.normal());
      b.push_back(rng.normal());
    }
    const double w = wasserstein1(a, b);
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double direct = 0.0;
    for (long i = 0; i < n; ++i) direct += std::fabs(sa[i] - sb[i]);
    direct /= static_cast<double>(n);
    if (std::fabs(w - direct) > 1e-12)
      throw NumericError("selftest wasserstein: " + std::to_string(w) + " vs " +
                         std::to_string(direct));
  }
  std::cout << "selftest: wasserstein vs sorted-pairing identity ok\n";
}

void selftest_influence_oracle() {
  const long dim = 6;
  Rng rng(61);
  Eigen::MatrixXd basis(dim, dim);
  for (long i = 0; i < dim; ++i)
    for (long j = 0; j < dim; ++j) basis(i, j) = rng.normal();
  const Eigen::MatrixXd hess =
      basis * basis.transpose() + Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd center(dim), fsum(dim);
  for (long i = 0; i < dim; ++i) {
    center(i) = rng.normal();
    fsum(i) = rng.normal();
  }
  auto grad = [&](const std::vector<double>& p) {
    Eigen::VectorXd x(dim);
    for (long i = 0; i < dim; ++i) x(i) = p[static_cast<std::size_t>(i)];
    Eigen::VectorXd g = hess * (x - center);
    return std::vector<double>(g.data(), g.data() + dim);
  };
  const std::vector<double> theta0(center.data(), center.data() + dim);
  const std::vector<double> fsum_v(fsum.data(), fsum.data() + dim);
  IuOptions opts;
  opts.damping = 0.5;
  opts.residual_tol = 1e-12;
  const std::vector<double> x = influence_update(theta0, grad, fsum_v, 12, opts);
  const Eigen::VectorXd oracle =
      (hess + opts.damping * Eigen::MatrixXd::Identity(dim, dim)).ldlt().solve(fsum / 12.0);
  double worst = 0.0;
  for (long i = 0; i < dim; ++i)
    worst = std::max(worst, std::fabs(x[static_cast<std::size_t>(i)] - oracle(i)));
  expect(worst < 1e-8, "influence update vs dense solve",
         "worst abs error " + std::to_string(worst));
}

int cmd_selftest() {
  selftest_model_gradient();
  selftest_attack_closed_form();
  selftest_attack_optimality();
  selftest_ift_pullback();
  selftest_ks_oracle();
  selftest_wasserstein_identity();
  selftest_influence_oracle();
  std::cout << "selftest: all checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// subcommands

struct Ctx {
  ExperimentConfig cfg;
  fs::path out;
};

Ctx load_ctx(const std::string& config_path) {
  Ctx ctx;
  ctx.cfg = load_config(config_path);
  ctx.out = ctx.cfg.output_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

std::vector<std::uint64_t> pick_seeds(const ExperimentConfig& cfg, long seed_flag) {
  if (seed_flag >= 0) return {static_cast<std::uint64_t>(seed_flag)};
  return cfg.seeds;
}

void cmd_gen_data(const Ctx& ctx, long seed_flag) {
  const std::uint64_t seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                                            : ctx.cfg.seeds.front();
  const DatasetBundle bundle = make_bundle(ctx.cfg, seed);
  const fs::path path = ctx.out / ("dataset_seed" + std::to_string(seed) + ".csv");
  save_csv(bundle, path.string());
  std::cout << "wrote " << bundle.rows() << " rows (" << bundle.num_classes << " classes) to "
            << path.string() << "\n";
}

void cmd_train(const Ctx& ctx, long seed_flag) {
  for (std::uint64_t seed : pick_seeds(ctx.cfg, seed_flag)) {
    const DatasetBundle bundle = make_bundle(ctx.cfg, seed);
    const ModelCheckpoint ckpt = train_original(ctx.cfg, bundle, seed);
    const fs::path path = orig_ckpt_path(ctx.out, ctx.cfg, seed);
    save_ckpt(ckpt, path.string());
    const auto rows = bundle.rows_in(Split::kTrain);
    const double acc =
        evaluate(ckpt, bundle.features.take_rows(rows), take(bundle.labels, rows));
    std::cout << "trained seed=" << seed << " train_acc=" << fmt4(acc) << " -> " << path.string()
              << "\n";
  }
}

void cmd_unlearn(const Ctx& ctx, const std::string& method_flag, long seed_flag) {
  const std::string method = method_flag.empty() ? ctx.cfg.method.name : method_flag;
  for (std::uint64_t seed : pick_seeds(ctx.cfg, seed_flag)) {
    const DatasetBundle bundle = make_bundle(ctx.cfg, seed);
    const ForgetPartition partition = make_partition(ctx.cfg, bundle, seed);
    const ModelCheckpoint orig = get_original(ctx.cfg, bundle, seed, ctx.out);
    ModelCheckpoint unlearned;
    RunRecord rec = run_method(ctx.cfg, bundle, partition, orig, method, seed, &unlearned);
    save_ckpt(unlearned, unlearned_ckpt_path(ctx.out, ctx.cfg, method, seed).string());
    write_record(ctx.out, rec);
    print_record_line(rec);
  }
}

void cmd_audit(const Ctx& ctx, const std::string& ckpt_flag, const std::string& method_flag,
               long seed_flag) {
  const std::string method = method_flag.empty() ? ctx.cfg.method.name : method_flag;
  const std::uint64_t seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                                            : ctx.cfg.seeds.front();
  fs::path ckpt_path = ckpt_flag.empty() ? unlearned_ckpt_path(ctx.out, ctx.cfg, method, seed)
                                         : fs::path(ckpt_flag);
  const ModelCheckpoint ckpt = load_ckpt(ckpt_path.string());
  const DatasetBundle bundle = make_bundle(ctx.cfg, seed);
  const ForgetPartition partition = make_partition(ctx.cfg, bundle, seed);
  const MetricsReport report = assemble_report(ckpt, bundle, partition, ctx.cfg.audit, seed);
  const std::string text = metrics_json_text(report);
  const fs::path out_path = ctx.out / ("audit_" + ckpt_path.stem().string() + ".json");
  std::ofstream f(out_path);
  if (!f) throw ContractError("cannot write " + out_path.string());
  f << text << "\n";
  std::cout << text << "\n";
}

void cmd_sweep(const Ctx& ctx, const std::string& alphas_flag, long seed_flag) {
  const std::vector<double> alphas = parse_alpha_list(alphas_flag);
  std::vector<RunRecord> records;
  for (double alpha : alphas) {
    ExperimentConfig cfg = ctx.cfg;
    cfg.method.name = "sg";
    cfg.method.alpha = alpha;
    for (std::uint64_t seed : pick_seeds(cfg, seed_flag)) {
      const DatasetBundle bundle = make_bundle(cfg, seed);
      const ForgetPartition partition = make_partition(cfg, bundle, seed);
      const ModelCheckpoint orig = get_original(cfg, bundle, seed, ctx.out);
      RunRecord rec = run_method(cfg, bundle, partition, orig, "sg", seed);
      write_record(ctx.out, rec);
      print_record_line(rec);
      records.push_back(std::move(rec));
    }
  }
  const fs::path csv = emit_plot_data(records, PlotKind::kAlphaSweep, ctx.out);
  std::cout << alphas.size() << " alpha groups -> " << csv.string() << "\n";
}

void cmd_ablate(const Ctx& ctx, long num_seeds) {
  if (num_seeds < 1) throw ContractError("ablate: --seeds must be at least 1");
  std::vector<RunRecord> off, on;
  for (long s = 1; s <= num_seeds; ++s) {
    const std::uint64_t seed = static_cast<std::uint64_t>(s);
    const DatasetBundle bundle = make_bundle(ctx.cfg, seed);
    const ForgetPartition partition = make_partition(ctx.cfg, bundle, seed);
    const ModelCheckpoint orig = get_original(ctx.cfg, bundle, seed, ctx.out);
    for (double alpha : {0.0, 1.0}) {
      RunRecord rec = run_sg_with_epoch_reports(ctx.cfg, bundle, partition, orig, alpha, seed);
      write_record(ctx.out, rec);
      print_record_line(rec);
      (alpha == 0.0 ? off : on).push_back(std::move(rec));
    }
  }
  const fs::path p0 = emit_plot_data(off, PlotKind::kAblation, ctx.out);
  const fs::path p1 = emit_plot_data(on, PlotKind::kAblation, ctx.out);
  std::cout << "ablation curves -> " << p0.string() << " and " << p1.string() << "\n";
}

void cmd_report(const std::string& config_path, const std::string& dir_flag) {
  fs::path dir;
  if (!dir_flag.empty()) {
    dir = dir_flag;
  } else if (!config_path.empty()) {
    dir = load_config(config_path).output_dir;
  } else {
    throw ContractError("report: need --config or --dir");
  }
  const std::vector<RunRecord> records = load_records(dir);
  if (records.empty()) throw ContractError("report: no records in " + dir.string());
  const std::string csv = report_csv(aggregate_records(records));
  const fs::path path = dir / "report.csv";
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write " + path.string());
  f << csv;
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stackelberg-game machine unlearning toolkit"};
  app.require_subcommand(1);

  std::string config_path, method_flag, ckpt_flag, dir_flag;
  std::string alphas_flag = "0.05,0.1,0.25,0.5,1,2,5";
  long seed_flag = -1;
  long ablate_seeds = 10;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the dataset CSV");
  gen->add_option("-c,--config", config_path)->required();
  gen->add_option("--seed", seed_flag);

  CLI::App* tr = app.add_subcommand("train", "train the original model");
  tr->add_option("-c,--config", config_path)->required();
  tr->add_option("--seed", seed_flag);

  CLI::App* un = app.add_subcommand("unlearn", "run one unlearning method");
  un->add_option("-c,--config", config_path)->required();
  un->add_option("-m,--method", method_flag, "sg|retrain|ft|ga|rl|l1|iu");
  un->add_option("--seed", seed_flag);

  CLI::App* au = app.add_subcommand("audit", "evaluate a checkpoint and emit metrics JSON");
  au->add_option("-c,--config", config_path)->required();
  au->add_option("--ckpt", ckpt_flag, "checkpoint path (defaults to the unlearn output)");
  au->add_option("-m,--method", method_flag);
  au->add_option("--seed", seed_flag);

  CLI::App* sw = app.add_subcommand("sweep", "sweep the leader step size alpha");
  sw->add_option("-c,--config", config_path)->required();
  sw->add_option("--alpha,--alphas", alphas_flag, "comma-separated alpha grid");
  sw->add_option("--seed", seed_flag);

  CLI::App* ab = app.add_subcommand("ablate", "paired alpha=0 vs alpha=1 runs with epoch traces");
  ab->add_option("-c,--config", config_path)->required();
  ab->add_option("--seeds", ablate_seeds, "number of paired seeds (1..N)");

  CLI::App* rp = app.add_subcommand("report", "aggregate run records into mean/std CSV");
  rp->add_option("-c,--config", config_path);
  rp->add_option("--dir", dir_flag, "records directory (overrides the config output dir)");

  app.add_subcommand("selftest", "run built-in oracle and gradient checks");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) cmd_gen_data(load_ctx(config_path), seed_flag);
    else if (tr->parsed()) cmd_train(load_ctx(config_path), seed_flag);
    else if (un->parsed()) cmd_unlearn(load_ctx(config_path), method_flag, seed_flag);
    else if (au->parsed()) cmd_audit(load_ctx(config_path), ckpt_flag, method_flag, seed_flag);
    else if (sw->parsed()) cmd_sweep(load_ctx(config_path), alphas_flag, seed_flag);
    else if (ab->parsed()) cmd_ablate(load_ctx(config_path), ablate_seeds);
    else if (rp->parsed()) cmd_report(config_path, dir_flag);
    else return cmd_selftest();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
