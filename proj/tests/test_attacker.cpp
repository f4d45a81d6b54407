#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "sgunlearn/attacker.hpp"
#include "sgunlearn/finite_diff.hpp"
#include "sgunlearn/rng.hpp"

using namespace sgu;

namespace {

Matrix random_matrix(Rng& rng, long rows, long cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.v) v = scale * rng.normal();
  return m;
}

std::vector<double> random_labels(Rng& rng, long n) {
  std::vector<double> y(static_cast<std::size_t>(n));
  for (double& v : y) v = rng.uniform01() < 0.5 ? -1.0 : 1.0;
  // force both labels
  y[0] = 1.0;
  y[y.size() - 1] = -1.0;
  return y;
}

// Independent solver oracle: gradient descent with backtracking, driven
// entirely by central finite differences of the public objective. Shares no
// derivative code with the Newton solver.
double gd_oracle_objective(const Matrix& feats, const std::vector<double>& y, AttackFamily family,
                           double reg) {
  const long p = feats.cols;
  std::vector<double> x(static_cast<std::size_t>(p) + 1, 0.0);
  auto obj = [&](const std::vector<double>& v) {
    return attack_objective(feats, y, family, reg,
                            std::vector<double>(v.begin(), v.end() - 1), v.back());
  };
  double f = obj(x);
  for (long iter = 0; iter < 50000; ++iter) {
    const std::vector<double> g = finite_diff_grad(obj, x, 1e-6);
    double gnorm = 0.0, gsq = 0.0;
    for (double gi : g) {
      gnorm = std::max(gnorm, std::fabs(gi));
      gsq += gi * gi;
    }
    if (gnorm < 1e-9) break;
    double t = 1.0;
    for (; t >= 1e-14; t *= 0.5) {
      std::vector<double> x_try(x);
      for (std::size_t i = 0; i < x.size(); ++i) x_try[i] -= t * g[i];
      const double f_try = obj(x_try);
      if (f_try <= f - 0.5 * t * gsq) {
        x = std::move(x_try);
        f = f_try;
        break;
      }
    }
    if (t < 1e-14) break;
  }
  return f;
}

AuditSet synthetic_audit(Rng& rng, long n_per_label, long p, double signal) {
  AuditSet audit;
  audit.features = random_matrix(rng, 2 * n_per_label, p);
  audit.membership.assign(static_cast<std::size_t>(2 * n_per_label), 1.0);
  for (long i = 0; i < n_per_label; ++i) audit.features.at(i, 0) += signal;
  for (long i = n_per_label; i < 2 * n_per_label; ++i)
    audit.membership[static_cast<std::size_t>(i)] = -1.0;
  for (long i = 0; i < 2 * n_per_label; ++i)
    (i % 2 == 0 ? audit.tr_indices : audit.val_indices).push_back(i);
  return audit;
}

}  // namespace

TEST_CASE("newton solver reaches stationarity for both families") {
  Rng rng(100);
  for (AttackFamily family : {AttackFamily::kSqHinge, AttackFamily::kLogistic}) {
    const double reg = family == AttackFamily::kSqHinge ? 1.0 : 0.1;
    const Matrix feats = random_matrix(rng, 40, 4);
    const std::vector<double> y = random_labels(rng, 40);
    const AttackSolution sol = solve_attack(feats, y, family, reg);
    CHECK(sol.grad_norm_at_solution <= 1e-10);

    SUBCASE("random perturbations never decrease the objective") {
      Rng prng(7);
      for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> delta(sol.w.size() + 1);
        double norm = 0.0;
        for (double& d : delta) {
          d = prng.normal();
          norm += d * d;
        }
        norm = std::sqrt(norm);
        std::vector<double> w2 = sol.w;
        for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += 1e-3 * delta[i] / norm;
        const double b2 = sol.b + 1e-3 * delta.back() / norm;
        CHECK(attack_objective(feats, y, family, reg, w2, b2) >= sol.objective);
      }
    }
    SUBCASE("swapping all membership signs negates the solution") {
      std::vector<double> y_neg(y);
      for (double& v : y_neg) v = -v;
      std::vector<double> w_neg(sol.w);
      for (double& v : w_neg) v = -v;
      CHECK(attack_objective(feats, y_neg, family, reg, w_neg, -sol.b) ==
            doctest::Approx(sol.objective).epsilon(1e-14));
      const AttackSolution sol_neg = solve_attack(feats, y_neg, family, reg);
      CHECK(sol_neg.objective == doctest::Approx(sol.objective).epsilon(1e-12));
    }
  }
}

TEST_CASE("sq-hinge hard-margin limit on a symmetric pair") {
  // two points {(-1,-1),(+1,+1)}: minimizing 1/2 w^2 + 2C(1-w)^2 at b=0 gives
  // w* = 4C/(1+4C) -> 1 as C -> inf
  Matrix feats(2, 1);
  feats.v = {-1.0, 1.0};
  const std::vector<double> y = {-1.0, 1.0};
  const double c_reg = 1e4;
  const AttackSolution sol = solve_attack(feats, y, AttackFamily::kSqHinge, c_reg);
  CHECK(sol.w[0] == doctest::Approx(4.0 * c_reg / (1.0 + 4.0 * c_reg)).epsilon(1e-9));
  CHECK(sol.w[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::fabs(sol.b) <= 1e-9);
  CHECK(sol.active_set == std::vector<long>{0, 1});
}

TEST_CASE("solver objective matches the finite-difference GD oracle on 10-point instances") {
  Rng rng(2024);
  for (int instance = 0; instance < 20; ++instance) {
    const AttackFamily family =
        instance % 2 == 0 ? AttackFamily::kSqHinge : AttackFamily::kLogistic;
    const double reg = family == AttackFamily::kSqHinge ? 1.0 : 0.1;
    const Matrix feats = random_matrix(rng, 10, 3);
    const std::vector<double> y = random_labels(rng, 10);
    const AttackSolution sol = solve_attack(feats, y, family, reg);
    const double oracle = gd_oracle_objective(feats, y, family, reg);
    CHECK(sol.objective <= oracle + 1e-9);
    CHECK(std::fabs(sol.objective - oracle) <= 1e-9);
  }
}

TEST_CASE("label-shuffled data gives chance-level validation accuracy") {
  double acc_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(500, seed));
    const Matrix feats = random_matrix(rng, 200, 4);
    const std::vector<double> y = random_labels(rng, 200);
    std::vector<long> tr, val;
    for (long i = 0; i < 200; ++i) (i < 100 ? tr : val).push_back(i);
    const AttackSolution sol =
        solve_attack(feats.take_rows(tr), take(y, tr), AttackFamily::kLogistic, 0.1);
    long correct = 0;
    for (long i : val) {
      double m = sol.b;
      for (long c = 0; c < 4; ++c) m += sol.w[static_cast<std::size_t>(c)] * feats.at(i, c);
      if ((m > 0 ? 1.0 : -1.0) == y[static_cast<std::size_t>(i)]) ++correct;
    }
    acc_sum += static_cast<double>(correct) / 100.0;
  }
  CHECK(acc_sum / 20.0 >= 0.43);
  CHECK(acc_sum / 20.0 <= 0.57);
}

TEST_CASE("duplicating every row leaves the logistic solution unchanged") {
  Rng rng(31);
  const Matrix feats = random_matrix(rng, 12, 3);
  const std::vector<double> y = random_labels(rng, 12);
  Matrix doubled(24, 3);
  std::vector<double> y2(24);
  for (long i = 0; i < 24; ++i) {
    for (long c = 0; c < 3; ++c) doubled.at(i, c) = feats.at(i % 12, c);
    y2[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i % 12)];
  }
  const AttackSolution a = solve_attack(feats, y, AttackFamily::kLogistic, 0.1);
  const AttackSolution b = solve_attack(doubled, y2, AttackFamily::kLogistic, 0.1);
  CHECK(max_rel_err(a.w, b.w) <= 1e-8);
  CHECK(std::fabs(a.b - b.b) <= 1e-8);
}

TEST_CASE("soft utility") {
  Rng rng(42);
  const Matrix feats = random_matrix(rng, 10, 3);
  std::vector<double> y = random_labels(rng, 10);
  AttackSolution sol;
  sol.family = AttackFamily::kLogistic;
  sol.w = {0.0, 0.0, 0.0};
  sol.b = 0.0;

  SUBCASE("zero attacker scores -ln 2") {
    CHECK(attack_utility_soft(sol, feats, y) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("utility approaches zero from below as separation grows") {
    Matrix sep(4, 1);
    sep.v = {1.0, 2.0, -1.0, -2.0};
    const std::vector<double> ysep = {1.0, 1.0, -1.0, -1.0};
    AttackSolution s;
    s.w = {1.0};
    s.b = 0.0;
    double prev = attack_utility_soft(s, sep, ysep);
    CHECK(prev < 0.0);
    for (double scale : {10.0, 100.0, 1000.0}) {
      s.w = {scale};
      const double u = attack_utility_soft(s, sep, ysep);
      CHECK(u > prev);
      CHECK(u <= 0.0);  // reaches -0 once exp(-margin) underflows
      prev = u;
    }
    CHECK(prev == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("gradient w.r.t. features matches finite differences") {
    sol.w = {0.4, -0.7, 0.2};
    sol.b = 0.3;
    ad::Tape tape;
    ad::Tensor f = tape.leaf({10, 3}, feats.v);
    tape.backward(attack_utility_soft(sol, f, y));
    auto probe = [&](const std::vector<double>& v) {
      Matrix m(10, 3);
      m.v = v;
      return attack_utility_soft(sol, m, y);
    };
    CHECK(max_rel_err(f.grad(), finite_diff_grad(probe, feats.v, 1e-6)) <= 1e-4);

    SUBCASE("closed-form (w,b) gradient agrees with a taped solve") {
      ad::Tape t2;
      ad::Tensor wt = t2.leaf({3}, sol.w);
      ad::Tensor bt = t2.leaf({1}, {sol.b});
      const ad::Tensor margins = ad::mul(
          ad::add(ad::matmul(ad::Tensor({10, 3}, feats.v), wt), bt), ad::Tensor({10}, y));
      t2.backward(ad::mul(ad::logistic_loss(margins), ad::Tensor::scalar(-1.0)));
      const std::vector<double> g = utility_grad_wb(sol, feats, y);
      for (int c = 0; c < 3; ++c)
        CHECK(g[static_cast<std::size_t>(c)] ==
              doctest::Approx(wt.grad()[static_cast<std::size_t>(c)]).epsilon(1e-12));
      CHECK(g[3] == doctest::Approx(bt.grad()[0]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ift gradient matches re-solve finite differences") {
  // composed value: solve on tr features, evaluate soft utility on fixed val
  for (auto [family, reg, seed] :
       {std::tuple{AttackFamily::kLogistic, 0.1, 1ULL},
        std::tuple{AttackFamily::kSqHinge, 1.0, 2ULL},
        std::tuple{AttackFamily::kLogistic, 0.05, 3ULL},
        std::tuple{AttackFamily::kSqHinge, 0.5, 4ULL}}) {
    Rng rng(mix_seed(900, seed));
    const long n = 30, p = 3;
    Matrix tr = random_matrix(rng, n, p);
    const std::vector<double> y_tr = random_labels(rng, n);
    const Matrix val = random_matrix(rng, 20, p);
    const std::vector<double> y_val = random_labels(rng, 20);
    for (long i = 0; i < n; ++i) tr.at(i, 0) += 0.5 * y_tr[static_cast<std::size_t>(i)];

    const AttackSolution sol = solve_attack(tr, y_tr, family, reg);
    if (family == AttackFamily::kSqHinge) {
      // keep the probe away from active-set boundaries
      bool near_boundary = false;
      for (long i = 0; i < n; ++i) {
        double m = sol.b;
        for (long c = 0; c < p; ++c) m += sol.w[static_cast<std::size_t>(c)] * tr.at(i, c);
        if (std::fabs(1.0 - y_tr[static_cast<std::size_t>(i)] * m) < 1e-3) near_boundary = true;
      }
      REQUIRE_FALSE(near_boundary);
    }

    const Matrix analytic =
        ift_feature_grad(sol, tr, y_tr, utility_grad_wb(sol, val, y_val));
    auto probe = [&](const std::vector<double>& flat) {
      Matrix m(n, p);
      m.v = flat;
      return attack_utility_soft(solve_attack(m, y_tr, family, reg), val, y_val);
    };
    const std::vector<double> numeric = finite_diff_grad(probe, tr.v, 1e-5);
    CHECK(max_rel_err(analytic.v, numeric) <= 1e-3);
  }
}

TEST_CASE("ift edge behavior") {
  Rng rng(77);
  const Matrix tr = random_matrix(rng, 20, 3);
  const std::vector<double> y = random_labels(rng, 20);

  SUBCASE("zero upstream gives exactly zero feature gradient") {
    const AttackSolution sol = solve_attack(tr, y, AttackFamily::kLogistic, 0.1);
    const Matrix g = ift_feature_grad(sol, tr, y, {0.0, 0.0, 0.0, 0.0});
    for (double v : g.v) CHECK(v == 0.0);
  }
  SUBCASE("strictly inactive sq-hinge rows carry zero gradient and inert perturbations") {
    // well-separated cluster pair plus one far outlier that ends up inactive
    Matrix feats(9, 1);
    feats.v = {0.3, 0.2, 0.25, -0.3, -0.2, -0.25, 8.0, 0.35, -0.35};
    const std::vector<double> labels = {1, 1, 1, -1, -1, -1, 1, 1, -1};
    const AttackSolution sol = solve_attack(feats, labels, AttackFamily::kSqHinge, 1.0);
    const double m6 = sol.w[0] * 8.0 + sol.b;
    const double slack = m6 - 1.0;
    REQUIRE(slack > 0.1);  // row 6 strictly inactive
    std::set<long> active(sol.active_set.begin(), sol.active_set.end());
    REQUIRE(active.count(6) == 0);

    const Matrix g = ift_feature_grad(sol, feats, labels, {0.7, -0.2});
    CHECK(g.at(6, 0) == 0.0);

    // perturbing the inactive row by less than slack/(2|w|) leaves the solution put
    Matrix nudged = feats;
    nudged.at(6, 0) += slack / (2.0 * std::fabs(sol.w[0]));
    const AttackSolution sol2 = solve_attack(nudged, labels, AttackFamily::kSqHinge, 1.0);
    CHECK(sol2.w[0] == doctest::Approx(sol.w[0]).epsilon(1e-10));
    CHECK(sol2.b == doctest::Approx(sol.b).epsilon(1e-10));
  }
}

TEST_CASE("audit set construction") {
  const DatasetBundle b = gen_gaussian_mixture(3, 80, 5, 2.0, 17);
  const ForgetPartition part = split_forget_random(b, 0.10, 3);
  MlpSpec spec{{5, 8, 3}, 5};
  ModelCheckpoint ckpt;
  ckpt.spec = spec;
  ckpt.params = init_params(spec);

  const AuditSet audit = build_audit_set(ckpt, b, part, FeatureMode::kProbsLoss, 9);
  const long n = static_cast<long>(part.forget_indices.size());
  CHECK(n == 14);  // round(0.1 * 144)
  CHECK(audit.features.rows == 2 * n);
  CHECK(audit.features.cols == 4);  // K + 1

  SUBCASE("membership is balanced and halves are stratified") {
    long pos = 0;
    for (double y : audit.membership) pos += y > 0;
    CHECK(pos == n);
    for (const std::vector<long>* half : {&audit.tr_indices, &audit.val_indices}) {
      long half_pos = 0;
      for (long i : *half) half_pos += audit.membership[static_cast<std::size_t>(i)] > 0;
      CHECK(half_pos * 2 == static_cast<long>(half->size()));
    }
    CHECK(audit.tr_indices.size() + audit.val_indices.size() ==
          static_cast<std::size_t>(2 * n));
    std::set<long> seen(audit.tr_indices.begin(), audit.tr_indices.end());
    for (long i : audit.val_indices) CHECK(seen.insert(i).second);
  }
  SUBCASE("bit-identical under the same seeds") {
    const AuditSet again = build_audit_set(ckpt, b, part, FeatureMode::kProbsLoss, 9);
    CHECK(again.features == audit.features);
    CHECK(again.tr_indices == audit.tr_indices);
    CHECK(again.val_indices == audit.val_indices);
  }
  SUBCASE("identical outputs for both populations score at chance") {
    // zero params: every row maps to uniform probs and ln K loss
    ModelCheckpoint flat = ckpt;
    for (double& v : flat.params) v = 0.0;
    const AuditSet blind = build_audit_set(flat, b, part, FeatureMode::kProbsLoss, 9);
    const MiaMetrics m = cv_mia_metrics(blind, 2, AttackFamily::kLogistic, 0.1, 13);
    CHECK(m.accuracy >= 0.45);
    CHECK(m.accuracy <= 0.55);
  }
  SUBCASE("too-small negative pool is a contract error") {
    const ForgetPartition all_train =
        split_forget_random(b, 0.8, 3);  // 115 forget rows > 36 audit rows
    CHECK_THROWS_AS(build_audit_set(ckpt, b, all_train, FeatureMode::kProbsLoss, 9),
                    ContractError);
  }
}

TEST_CASE("cv metrics") {
  SUBCASE("no signal stays near chance over 20 seeds") {
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(mix_seed(3000, seed));
      const AuditSet audit = synthetic_audit(rng, 30, 3, 0.0);
      acc += cv_mia_metrics(audit, 5, AttackFamily::kLogistic, 0.1, seed).accuracy;
    }
    acc /= 20.0;
    CHECK(acc >= 0.43);
    CHECK(acc <= 0.57);
  }
  SUBCASE("perfect signal is perfectly detected") {
    AuditSet audit;
    audit.features = Matrix(40, 2);
    audit.membership.resize(40);
    Rng rng(5);
    for (long i = 0; i < 40; ++i) {
      const double y = i < 20 ? 1.0 : -1.0;
      audit.membership[static_cast<std::size_t>(i)] = y;
      audit.features.at(i, 0) = y;  // feature equals the label
      audit.features.at(i, 1) = rng.normal();
    }
    const MiaMetrics m = cv_mia_metrics(audit, 4, AttackFamily::kSqHinge, 1.0, 3);
    CHECK(m.accuracy == 1.0);
    CHECK(m.auc == 1.0);
    CHECK(m.f1 == 1.0);
  }
  SUBCASE("rank auc equals the pairwise-comparison oracle") {
    // 8 points, one overlapping score between the classes
    const std::vector<double> decision = {0.1, 0.5, 0.9, 0.5, -0.2, 0.3, -0.7, 0.5};
    const std::vector<double> labels = {1, 1, 1, 1, -1, -1, -1, -1};
    double wins = 0.0;
    long pairs = 0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        if (labels[i] < 0 || labels[j] > 0) continue;
        ++pairs;
        if (decision[i] > decision[j]) wins += 1.0;
        else if (decision[i] == decision[j]) wins += 0.5;
      }
    CHECK(rank_auc(decision, labels) == doctest::Approx(wins / pairs).epsilon(1e-14));

    Rng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> d(12), y(12);
      for (auto& v : d) v = std::round(rng.normal() * 2.0) / 2.0;  // force ties
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0 ? 1.0 : -1.0;
      double w = 0.0;
      long np = 0;
      for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
          if (y[i] < 0 || y[j] > 0) continue;
          ++np;
          w += d[i] > d[j] ? 1.0 : (d[i] == d[j] ? 0.5 : 0.0);
        }
      CHECK(rank_auc(d, y) == doctest::Approx(w / np).epsilon(1e-14));
    }
  }
  SUBCASE("row permutation leaves the metrics unchanged") {
    Rng rng(88);
    const AuditSet audit = synthetic_audit(rng, 20, 3, 1.0);
    AuditSet shuffled = audit;
    std::vector<long> perm(40);
    for (long i = 0; i < 40; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng prng(123);
    prng.shuffle(perm);
    shuffled.features = audit.features.take_rows(perm);
    shuffled.membership = take(audit.membership, perm);
    const MiaMetrics a = cv_mia_metrics(audit, 5, AttackFamily::kLogistic, 0.1, 21);
    const MiaMetrics b = cv_mia_metrics(shuffled, 5, AttackFamily::kLogistic, 0.1, 21);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.auc == b.auc);
    CHECK(a.f1 == b.f1);
  }
  SUBCASE("contract errors") {
    Rng rng(6);
    const AuditSet audit = synthetic_audit(rng, 4, 2, 1.0);
    CHECK_THROWS_AS(cv_mia_metrics(audit, 1, AttackFamily::kLogistic, 0.1, 0), ContractError);
    CHECK_THROWS_AS(cv_mia_metrics(audit, 5, AttackFamily::kLogistic, 0.1, 0), ContractError);
  }
}
