#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sgunlearn/finite_diff.hpp"
#include "sgunlearn/rng.hpp"
#include "sgunlearn/tensor.hpp"

using namespace sgu;
using namespace sgu::ad;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

// Checks d(loss)/d(x) for a scalar loss rebuilt from scratch at each probe
// point, against the central finite-difference oracle.
void check_grad(const std::function<Tensor(Tape&, const Tensor&)>& build, const Shape& xshape,
                const std::vector<double>& x0, double tol = 1e-4) {
  Tape tape;
  Tensor x = tape.leaf(xshape, x0);
  Tensor loss = build(tape, x);
  REQUIRE(loss.numel() == 1);
  tape.backward(loss);
  const std::vector<double> analytic = x.grad();

  auto f = [&](const std::vector<double>& v) {
    Tape t2;
    Tensor xv = t2.leaf(xshape, v);
    return build(t2, xv).item();
  };
  const std::vector<double> numeric = finite_diff_grad(f, x0, 1e-6);
  CHECK(max_rel_err(analytic, numeric) <= tol);
}

}  // namespace

TEST_CASE("forward values match definitions") {
  SUBCASE("relu") {
    Tensor r = relu(Tensor({3}, {-1.0, 0.0, 2.0}));
    CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});
  }
  SUBCASE("softmax-CE on uniform logits is ln(3)") {
    Tape tape;
    Tensor z = tape.leaf({1, 3}, {0.0, 0.0, 0.0});
    Tensor ce = softmax_ce(z, {0});
    CHECK(ce.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("matmul identity") {
    Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor i({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(matmul(a, i).values() == a.values());
  }
  SUBCASE("matrix-vector") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor v({3}, {1, 0, -1});
    Tensor out = matmul(a, v);
    CHECK(out.shape() == Shape{2});
    CHECK(out.values() == std::vector<double>{-2.0, -2.0});
  }
  SUBCASE("row-broadcast add") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2}, {10, 20});
    CHECK(add(a, b).values() == std::vector<double>{11, 22, 13, 24});
  }
  SUBCASE("concat_cols with rank-1 right side") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2}, {9, 8});
    Tensor c = concat_cols(a, b);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.values() == std::vector<double>{1, 2, 9, 3, 4, 8});
  }
  SUBCASE("logistic loss at zero margin") {
    Tensor m({2}, {0.0, 0.0});
    CHECK(logistic_loss(m).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("softmax rows sum to one") {
    Tensor p = softmax_rows(Tensor({2, 3}, {1, 2, 3, -1, 0, 1}));
    CHECK(p.values()[0] + p.values()[1] + p.values()[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.values()[3] + p.values()[4] + p.values()[5] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("trivial backward identities") {
  SUBCASE("d sum(x*x)/dx = 2x") {
    Tape tape;
    Tensor x = tape.leaf({1}, {3.0});
    tape.backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{6.0});
  }
  SUBCASE("mean gradient is 1/n") {
    Tape tape;
    Tensor x = tape.leaf({4}, {1.0, 2.0, 3.0, 4.0});
    tape.backward(mean(x));
    CHECK(x.grad() == std::vector<double>(4, 0.25));
  }
  SUBCASE("softmax-CE gradient is softmax minus onehot") {
    Tape tape;
    Tensor z = tape.leaf({1, 3}, {0.3, -0.7, 1.1});
    tape.backward(sum(softmax_ce(z, {2})));
    Tensor p = softmax_rows(Tensor({1, 3}, {0.3, -0.7, 1.1}));
    const std::vector<double> expect = {p.values()[0], p.values()[1], p.values()[2] - 1.0};
    CHECK(max_rel_err(z.grad(), expect) <= 1e-12);
  }
}

TEST_CASE("finite difference oracle sanity") {
  auto sumsq = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  };
  const std::vector<double> g = finite_diff_grad(sumsq, {1.0, 2.0}, 1e-6);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  auto constant = [](const std::vector<double>&) { return 7.5; };
  for (double gi : finite_diff_grad(constant, {0.4, -1.0, 3.0}, 1e-6)) CHECK(gi == 0.0);

  // logistic loss of a fixed linear model, backward vs FD within 1e-5
  const std::vector<double> w0 = {0.4, -0.9, 0.2};
  const std::vector<double> feats = {1.0, 2.0, -0.5, 0.3, -1.2, 0.8};
  const std::vector<double> ys = {1.0, -1.0};
  auto build = [&](Tape& t, const Tensor& w) {
    Tensor s({2, 3}, feats);
    Tensor margins = mul(matmul(s, w), Tensor({2}, ys));
    return logistic_loss(margins);
  };
  Tape tape;
  Tensor w = tape.leaf({3}, w0);
  tape.backward(build(tape, w));
  auto f = [&](const std::vector<double>& v) {
    Tape t2;
    Tensor wv = t2.leaf({3}, v);
    return build(t2, wv).item();
  };
  CHECK(max_rel_err(w.grad(), finite_diff_grad(f, w0, 1e-6)) <= 1e-5);
}

TEST_CASE("every op matches finite differences over 50 seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(mix_seed(1234, seed));

    SUBCASE("matmul both operands") {
      const auto a0 = random_vec(rng, 6);
      const auto b0 = random_vec(rng, 8);
      check_grad(
          [&](Tape&, const Tensor& x) {
            return sum(matmul(x, Tensor({3, 4}, {b0[0], b0[1], b0[2], b0[3], b0[4], b0[5], b0[6],
                                                 b0[7], 0.5, -0.5, 1.0, 2.0})));
          },
          {2, 3}, a0);
      check_grad(
          [&](Tape&, const Tensor& x) { return sum(matmul(Tensor({2, 3}, a0), x)); }, {3, 4},
          random_vec(rng, 12));
      check_grad(
          [&](Tape&, const Tensor& x) { return sum(matmul(Tensor({2, 3}, a0), x)); }, {3},
          random_vec(rng, 3));
      check_grad(
          [&](Tape&, const Tensor& x) { return sum(matmul(x, Tensor({3}, {1.0, -2.0, 0.5}))); },
          {2, 3}, a0);
    }
    SUBCASE("add variants") {
      const auto c4 = random_vec(rng, 4);
      const auto c3 = random_vec(rng, 3);
      const auto c6 = random_vec(rng, 6);
      check_grad([&](Tape&, const Tensor& x) { return sum(add(x, Tensor({4}, c4))); }, {4},
                 random_vec(rng, 4));
      check_grad([&](Tape&, const Tensor& x) { return sum(add(Tensor({4}, c4), x)); }, {1},
                 random_vec(rng, 1));
      check_grad([&](Tape&, const Tensor& x) { return sum(add(Tensor({2, 3}, c6), x)); }, {3},
                 random_vec(rng, 3));
      check_grad([&](Tape&, const Tensor& x) { return sum(add(x, Tensor({3}, c3))); }, {2, 3},
                 random_vec(rng, 6));
    }
    SUBCASE("mul variants") {
      const auto c5 = random_vec(rng, 5);
      check_grad([&](Tape&, const Tensor& x) { return sum(mul(x, Tensor({5}, c5))); }, {5},
                 random_vec(rng, 5));
      check_grad([&](Tape&, const Tensor& x) { return sum(mul(x, Tensor::scalar(1.7))); }, {5},
                 random_vec(rng, 5));
      check_grad([&](Tape&, const Tensor& x) { return sum(mul(Tensor({5}, c5), x)); }, {1},
                 random_vec(rng, 1));
    }
    SUBCASE("relu away from the kink") {
      auto x0 = random_vec(rng, 6);
      for (double& v : x0)
        if (std::fabs(v) < 1e-2) v = 0.5;
      check_grad([](Tape&, const Tensor& x) { return sum(relu(x)); }, {6}, x0);
    }
    SUBCASE("sigmoid") {
      check_grad([](Tape&, const Tensor& x) { return sum(sigmoid(x)); }, {6}, random_vec(rng, 6));
    }
    SUBCASE("log") {
      check_grad([](Tape&, const Tensor& x) { return sum(log(x)); }, {6},
                 random_vec(rng, 6, 0.2, 3.0));
    }
    SUBCASE("exp") {
      check_grad([](Tape&, const Tensor& x) { return sum(exp(x)); }, {6}, random_vec(rng, 6));
    }
    SUBCASE("mean and sum") {
      check_grad([](Tape&, const Tensor& x) { return mean(x); }, {7}, random_vec(rng, 7));
      check_grad([](Tape&, const Tensor& x) { return sum(x); }, {7}, random_vec(rng, 7));
    }
    SUBCASE("gather_rows with a repeated index") {
      check_grad(
          [](Tape&, const Tensor& x) {
            return sum(gather_rows(x, {0, 2, 2}));
          },
          {3, 2}, random_vec(rng, 6));
      const auto w3 = random_vec(rng, 3);
      check_grad(
          [&](Tape&, const Tensor& x) {
            return sum(mul(gather_rows(x, {1, 1, 3}), Tensor({3}, w3)));
          },
          {4}, random_vec(rng, 4));
    }
    SUBCASE("concat_cols") {
      const auto c0 = random_vec(rng, 6);
      const auto left = random_vec(rng, 4);
      check_grad(
          [&](Tape&, const Tensor& x) {
            return sum(mul(concat_cols(x, Tensor({2, 1}, {3.0, -1.0})), Tensor({2, 3}, c0)));
          },
          {2, 2}, random_vec(rng, 4));
      check_grad(
          [&](Tape&, const Tensor& x) {
            return sum(mul(concat_cols(Tensor({2, 2}, left), x), Tensor({2, 3}, c0)));
          },
          {2}, random_vec(rng, 2));
    }
    SUBCASE("softmax_ce") {
      check_grad(
          [](Tape&, const Tensor& x) { return mean(softmax_ce(x, {2, 0, 1})); }, {3, 3},
          random_vec(rng, 9));
    }
    SUBCASE("softmax_rows") {
      const auto wts = random_vec(rng, 8);
      check_grad(
          [&](Tape&, const Tensor& x) { return sum(mul(softmax_rows(x), Tensor({2, 4}, wts))); },
          {2, 4}, random_vec(rng, 8));
    }
    SUBCASE("logistic_loss") {
      check_grad([](Tape&, const Tensor& x) { return logistic_loss(x); }, {6},
                 random_vec(rng, 6, -4.0, 4.0));
    }
    SUBCASE("two-layer relu network composition") {
      const auto w2 = random_vec(rng, 12);
      const auto feats = random_vec(rng, 8);
      check_grad(
          [&](Tape&, const Tensor& w1) {
            Tensor h = relu(matmul(Tensor({2, 4}, feats), w1));
            Tensor z = matmul(h, Tensor({4, 3}, w2));
            return mean(softmax_ce(z, {0, 2}));
          },
          {4, 4}, random_vec(rng, 16, -1.0, 1.0));
    }
  }
}

TEST_CASE("custom scalar node composes caller-supplied gradients") {
  // custom value = sum(x^3) with analytic backward; FD sees through it because
  // the graph is rebuilt per probe.
  auto build = [](Tape& t, const Tensor& x) {
    double v = 0.0;
    for (double xi : x.values()) v += xi * xi * xi;
    Tensor c = t.custom_scalar({x}, v, [xv = x.values()](double up) {
      std::vector<double> g(xv.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = up * 3.0 * xv[i] * xv[i];
      return std::vector<std::vector<double>>{g};
    });
    return mul(c, Tensor::scalar(0.5));
  };
  check_grad(build, {3}, {0.7, -1.2, 0.4});

  // the custom node also adds onto tape-computed terms
  auto build2 = [&](Tape& t, const Tensor& x) { return add(build(t, x), sum(mul(x, x))); };
  check_grad(build2, {3}, {0.7, -1.2, 0.4});
}

TEST_CASE("backward is deterministic and accumulates") {
  Rng rng(99);
  const auto x0 = random_vec(rng, 8);
  auto run = [&]() {
    Tape tape;
    Tensor x = tape.leaf({2, 4}, x0);
    Tensor loss = mean(softmax_ce(mul(x, x), {1, 3}));
    tape.backward(loss);
    return x.grad();
  };
  const auto g1 = run();
  const auto g2 = run();
  CHECK(g1 == g2);  // bit-identical

  Tape tape;
  Tensor x = tape.leaf({2, 4}, x0);
  Tensor loss = mean(softmax_ce(mul(x, x), {1, 3}));
  tape.backward(loss);
  const auto once = x.grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
  tape.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("relu gradient at exactly zero is zero") {
  Tape tape;
  Tensor x = tape.leaf({3}, {-1.0, 0.0, 1.0});
  tape.backward(sum(relu(x)));
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("error paths") {
  SUBCASE("shape mismatches are contract errors") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}, std::vector<double>(6, 1.0)),
                           Tensor({2, 2}, std::vector<double>(4, 1.0))),
                    ContractError);
    CHECK_THROWS_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), ContractError);
    CHECK_THROWS_AS(mul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {1, 2})), ContractError);
    CHECK_THROWS_AS(concat_cols(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({3}, {1, 2, 3})),
                    ContractError);
    CHECK_THROWS_AS(gather_rows(Tensor({2, 2}, {1, 2, 3, 4}), {2}), ContractError);
    CHECK_THROWS_AS(softmax_ce(Tensor({1, 3}, {1, 2, 3}), {3}), ContractError);
  }
  SUBCASE("non-finite outputs are numeric errors naming the op") {
    CHECK_THROWS_WITH_AS(log(Tensor({1}, {-1.0})), doctest::Contains("log"), NumericError);
    CHECK_THROWS_WITH_AS(exp(Tensor({1}, {1000.0})), doctest::Contains("exp"), NumericError);
  }
  SUBCASE("non-finite constants are rejected") {
    CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
  }
  SUBCASE("backward requires a scalar root on the tape") {
    Tape tape;
    Tensor x = tape.leaf({2}, {1.0, 2.0});
    CHECK_THROWS_AS(tape.backward(x), ContractError);
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ContractError);
  }
  SUBCASE("ops refuse inputs from two different tapes") {
    Tape t1, t2;
    Tensor a = t1.leaf({2}, {1.0, 2.0});
    Tensor b = t2.leaf({2}, {3.0, 4.0});
    CHECK_THROWS_AS(add(a, b), ContractError);
  }
}
