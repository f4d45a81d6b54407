#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "sgunlearn/datasets.hpp"
#include "sgunlearn/models.hpp"

using namespace sgu;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/sgu_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("gaussian mixture generation") {
  const DatasetBundle b = gen_gaussian_mixture(5, 40, 20, 2.0, 7);
  CHECK(b.rows() == 200);
  CHECK(b.dim() == 20);
  CHECK(b.num_classes == 5);

  SUBCASE("split fractions 60/10/15/15 per class") {
    CHECK(b.rows_in(Split::kTrain).size() == 120);
    CHECK(b.rows_in(Split::kVal).size() == 20);
    CHECK(b.rows_in(Split::kTestAudit).size() == 30);
    CHECK(b.rows_in(Split::kTestEval).size() == 30);
  }
  SUBCASE("splits partition the rows and every class appears in every split") {
    std::size_t total = 0;
    for (Split s : {Split::kTrain, Split::kVal, Split::kTestAudit, Split::kTestEval}) {
      const auto rows = b.rows_in(s);
      total += rows.size();
      std::set<long> classes;
      for (long r : rows) classes.insert(b.labels[static_cast<std::size_t>(r)]);
      CHECK(classes.size() == 5);
    }
    CHECK(total == 200);
  }
  SUBCASE("deterministic per seed, distinct across seeds") {
    CHECK(gen_gaussian_mixture(5, 40, 20, 2.0, 7) == b);
    CHECK_FALSE(gen_gaussian_mixture(5, 40, 20, 2.0, 8) == b);
  }
  SUBCASE("invalid sizes are contract errors") {
    CHECK_THROWS_AS(gen_gaussian_mixture(1, 40, 20, 2.0, 7), ContractError);
    CHECK_THROWS_AS(gen_gaussian_mixture(5, 40, 1, 2.0, 7), ContractError);
    CHECK_THROWS_AS(gen_gaussian_mixture(5, 40, 20, -1.0, 7), ContractError);
  }
}

TEST_CASE("well-separated mixture is learnable, unseparated is not") {
  // linear classifier = MLP with no hidden layer
  SUBCASE("separation 10 reaches test accuracy >= 0.99") {
    const DatasetBundle b = gen_gaussian_mixture(2, 200, 2, 10.0, 3);
    const auto tr = b.rows_in(Split::kTrain);
    MlpSpec spec{{2, 2}, 3};
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.lr = 0.05;
    const ModelCheckpoint ckpt =
        train(b.features.take_rows(tr), take(b.labels, tr), spec, cfg);
    const auto te = b.rows_in(Split::kTestEval);
    CHECK(evaluate(ckpt, b.features.take_rows(te), take(b.labels, te)) >= 0.99);
  }
  SUBCASE("separation 0 stays near chance over 20 seeds") {
    double acc_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const DatasetBundle b = gen_gaussian_mixture(2, 60, 2, 0.0, seed);
      const auto tr = b.rows_in(Split::kTrain);
      MlpSpec spec{{2, 2}, seed};
      TrainConfig cfg;
      cfg.epochs = 10;
      cfg.lr = 0.05;
      const ModelCheckpoint ckpt =
          train(b.features.take_rows(tr), take(b.labels, tr), spec, cfg);
      const auto te = b.rows_in(Split::kTestEval);
      acc_sum += evaluate(ckpt, b.features.take_rows(te), take(b.labels, te));
    }
    const double mean_acc = acc_sum / 20.0;
    CHECK(mean_acc >= 0.4);
    CHECK(mean_acc <= 0.6);
  }
}

TEST_CASE("forget partitions") {
  const DatasetBundle b = gen_gaussian_mixture(5, 40, 4, 2.0, 11);
  const auto train_rows = b.rows_in(Split::kTrain);

  SUBCASE("random mode sizes and partition invariants") {
    const ForgetPartition p = split_forget_random(b, 0.10, 5);
    CHECK(p.forget_indices.size() == 12);  // round(0.10 * 120)
    CHECK(p.forget_indices.size() + p.retain_indices.size() == train_rows.size());
    std::set<long> all(p.forget_indices.begin(), p.forget_indices.end());
    for (long r : p.retain_indices) CHECK(all.insert(r).second);
    std::set<long> train_set(train_rows.begin(), train_rows.end());
    for (long r : all) CHECK(train_set.count(r) == 1);
  }
  SUBCASE("ten percent of 2000 train rows is 200") {
    const DatasetBundle big = gen_gaussian_mixture(5, 667, 4, 2.0, 11);
    CHECK(big.rows_in(Split::kTrain).size() == 2000);
    CHECK(split_forget_random(big, 0.10, 5).forget_indices.size() == 200);
  }
  SUBCASE("classwise takes exactly the class") {
    const ForgetPartition p = split_forget_classwise(b, 3, 5);
    CHECK(p.forget_indices.size() == 24);  // 120 train rows / 5 classes
    for (long r : p.forget_indices) CHECK(b.labels[static_cast<std::size_t>(r)] == 3);
    for (long r : p.retain_indices) CHECK(b.labels[static_cast<std::size_t>(r)] != 3);
  }
  SUBCASE("two seeds overlap about hypergeometrically") {
    const DatasetBundle big = gen_gaussian_mixture(5, 667, 4, 2.0, 11);
    const ForgetPartition p1 = split_forget_random(big, 0.10, 1);
    const ForgetPartition p2 = split_forget_random(big, 0.10, 2);
    std::set<long> s1(p1.forget_indices.begin(), p1.forget_indices.end());
    long overlap = 0;
    for (long r : p2.forget_indices) overlap += s1.count(r);
    CHECK(overlap > 5);   // expectation 20, sd ~4.2
    CHECK(overlap < 50);
    CHECK_FALSE(p1.forget_indices == p2.forget_indices);
  }
  SUBCASE("determinism and argument validation") {
    CHECK(split_forget_random(b, 0.10, 5).forget_indices ==
          split_forget_random(b, 0.10, 5).forget_indices);
    CHECK_THROWS_AS(split_forget_random(b, 0.0, 5), ContractError);
    CHECK_THROWS_AS(split_forget_random(b, 1.0, 5), ContractError);
    CHECK_THROWS_AS(split_forget_classwise(b, 5, 5), ContractError);
    CHECK_THROWS_AS(split_forget_classwise(b, -1, 5), ContractError);
  }
}

TEST_CASE("csv round trip") {
  TempFile f("bundle.csv");
  const DatasetBundle b = gen_gaussian_mixture(3, 8, 4, 1.5, 13);
  save_csv(b, f.path);
  const DatasetBundle back = load_csv(f.path);
  CHECK(back == b);

  SUBCASE("handcrafted file parses to literal matrix") {
    TempFile g("small.csv");
    std::ofstream out(g.path);
    out << "f0,f1,label,split\n1,2,0,train\n3,4,1,val\n5,6,0,test_audit\n";
    out.close();
    const DatasetBundle small = load_csv(g.path);
    CHECK(small.features.v == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(small.labels == std::vector<long>{0, 1, 0});
    CHECK(small.num_classes == 2);
  }
  SUBCASE("missing label column is a parse error") {
    TempFile g("nolabel.csv");
    std::ofstream(g.path) << "f0,f1,split\n1,2,train\n";
    CHECK_THROWS_AS(load_csv(g.path), ParseError);
  }
  SUBCASE("malformed row errors carry the line number") {
    TempFile g("badrow.csv");
    std::ofstream(g.path) << "f0,label,split\n1,0,train\nnot_a_number,1,val\n";
    CHECK_THROWS_WITH_AS(load_csv(g.path), doctest::Contains("line 3"), ParseError);
  }
  SUBCASE("unknown split tag is a contract error") {
    TempFile g("badsplit.csv");
    std::ofstream(g.path) << "f0,label,split\n1,0,holdout\n";
    CHECK_THROWS_AS(load_csv(g.path), ContractError);
  }
  SUBCASE("wrong field count points at the row") {
    TempFile g("short.csv");
    std::ofstream(g.path) << "f0,f1,label,split\n1,0,train\n";
    CHECK_THROWS_WITH_AS(load_csv(g.path), doctest::Contains("line 2"), ParseError);
  }
}
