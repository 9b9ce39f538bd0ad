#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <irk/gradcheck.hpp>
#include <irk/losses.hpp>

using namespace irk;

namespace {

std::vector<std::vector<double>> unit_instruction_feats(int b, int dim = 4) {
  std::vector<std::vector<double>> out(size_t(b), std::vector<double>(size_t(dim), 0.0));
  for (auto& v : out) v[0] = 1.0;
  return out;
}

}  // namespace

TEST_CASE("relatedness: indicator times cosine") {
  std::vector<double> a = {1, 0, 0};
  std::vector<double> b = {0, 1, 0};
  std::vector<double> a2 = {2, 0, 0};
  CHECK(relatedness(1, 2, a, a) == 0.0);
  CHECK(relatedness(3, 3, a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(relatedness(3, 3, a, b) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(relatedness(3, 3, a, a2) == doctest::Approx(1.0).epsilon(1e-15));  // scale invariant
  std::vector<double> zero = {0, 0, 0};
  CHECK_THROWS_AS(relatedness(3, 3, a, zero), NumericError);
}

TEST_CASE("adaptive triplet loss hand-evaluated cases") {
  // features in R^2 chosen so the squared distances are exact binary values
  // a=(0,0), r1=(1,0) -> d1 = 1.0 ; r2=(0.5,0.5) -> d2 = 0.5
  Tensor<double> feats({3, 2}, {0.0, 0.0, 1.0, 0.0, 0.5, 0.5});
  Tape<double> tape;
  auto v = tape.leaf(feats);

  SUBCASE("beta1 = beta2 contributes exactly zero") {
    TripletBatch batch;
    batch.margin = 0.3;
    batch.triples = {Triple{0, 1, 2, 0.7, 0.7}};
    auto loss = adaptive_triplet_loss(v, batch);
    CHECK(loss.val()[0] == 0.0);
  }

  SUBCASE("beta1=1, beta2=0, d=(1.0,0.5), m=0.3 -> 0.8") {
    TripletBatch batch;
    batch.margin = 0.3;
    batch.triples = {Triple{0, 1, 2, 1.0, 0.0}};
    auto loss = adaptive_triplet_loss(v, batch);
    CHECK(std::fabs(loss.val()[0] - 0.8) <= 1e-12);
  }

  SUBCASE("beta1=0, beta2=1, d=(0.2,0.5), m=0.3 -> 0.6") {
    // a=(0,0), r1=(0.4,0.2) -> d1 = 0.16+0.04 = 0.2 ; r2=(0.5,0.5) -> d2 = 0.5
    Tensor<double> f2({3, 2}, {0.0, 0.0, 0.4, 0.2, 0.5, 0.5});
    auto v2 = tape.leaf(f2);
    TripletBatch batch;
    batch.margin = 0.3;
    batch.triples = {Triple{0, 1, 2, 0.0, 1.0}};
    auto loss = adaptive_triplet_loss(v2, batch);
    CHECK(std::fabs(loss.val()[0] - 0.6) <= 1e-12);
  }

  SUBCASE("empty triple list returns zero") {
    TripletBatch batch;
    auto loss = adaptive_triplet_loss(v, batch);
    CHECK(loss.val()[0] == 0.0);
  }
}

TEST_CASE("adaptive triplet reduces to classic triplet loss when beta1=1, beta2=0") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    int b = 4 + rng.uniform_int(5);
    int c = 2 + rng.uniform_int(6);
    Tensor<double> feats({b, c});
    for (auto& v : feats.values) v = rng.uniform(-2, 2);
    TripletBatch batch;
    batch.margin = rng.uniform(0.05, 0.5);
    int n = 3 + rng.uniform_int(10);
    for (int i = 0; i < n; ++i) {
      int a = rng.uniform_int(b), r1 = rng.uniform_int(b), r2 = rng.uniform_int(b);
      batch.triples.push_back(Triple{a, r1, r2, 1.0, 0.0});
    }
    Tape<double> tape;
    auto loss = adaptive_triplet_loss(tape.leaf(feats), batch);

    auto sqd = [&](int i, int j) {
      double acc = 0;
      for (int k = 0; k < c; ++k) {
        double d = feats.at(i, k) - feats.at(j, k);
        acc += d * d;
      }
      return acc;
    };
    double classic = 0;
    for (const auto& tr : batch.triples)
      classic += std::max(0.0, sqd(tr.anchor, tr.r1) + batch.margin - sqd(tr.anchor, tr.r2));
    classic /= double(batch.triples.size());
    CHECK(loss.val()[0] == classic);
  }
}

TEST_CASE("adaptive triplet antisymmetry: swapping references leaves the value unchanged") {
  Rng rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor<double> feats({4, 3});
    for (auto& v : feats.values) v = rng.uniform(-1, 1);
    double b1 = rng.uniform(-1, 1), b2 = rng.uniform(-1, 1);
    TripletBatch fwd, swp;
    fwd.margin = swp.margin = 0.3;
    fwd.triples = {Triple{0, 1, 2, b1, b2}};
    swp.triples = {Triple{0, 2, 1, b2, b1}};
    Tape<double> tape;
    auto l1 = adaptive_triplet_loss(tape.leaf(feats), fwd);
    auto l2 = adaptive_triplet_loss(tape.leaf(feats), swp);
    CHECK(l1.val()[0] == doctest::Approx(l2.val()[0]).epsilon(1e-14));
  }
}

TEST_CASE("adaptive triplet gradient matches finite differences") {
  Rng rng(33);
  ParamStore<double> ps;
  Tensor<double> feats({6, 4});
  for (auto& v : feats.values) v = rng.uniform(-1, 1);
  ps.create("f", feats);
  TripletBatch batch;
  batch.margin = 0.3;
  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  auto ifeats = unit_instruction_feats(6);
  // vary instruction vectors so betas spread
  ifeats[1] = {0.6, 0.8, 0, 0};
  ifeats[3] = {0, 1, 0, 0};
  batch = mine_triplets(labels, ifeats, feats.values, 4, 0.3, MiningMode::All);
  REQUIRE(batch.count() > 0);
  auto build = [&](Graph<double>& g) { return adaptive_triplet_loss(g.param("f"), batch); };
  auto rep = finite_diff_check<double>(build, ps, 1e-6);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("identity loss analytic values") {
  ParamStore<double> ps;
  ps.create("head.idf.w", Shape{3, 3});
  ps.create("head.idf.b", Shape{3});

  SUBCASE("uniform logits give ln K") {
    Tensor<double> f({2, 3});  // zero features + zero weights -> uniform logits
    Graph<double> g(ps);
    auto loss = identity_loss(g, "idf", g.constant(f), {0, 2});
    CHECK(g.value(loss) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  SUBCASE("confident correct logit drives loss to zero") {
    Tape<double> tape;
    auto logits = tape.leaf(Shape{1, 3}, {50.0, 0.0, 0.0});
    auto loss = softmax_cross_entropy(logits, {0});
    CHECK(loss.val()[0] < 1e-10);
  }

  SUBCASE("hand case logits [2,1,0] label 0") {
    Tape<double> tape;
    auto loss = softmax_cross_entropy(tape.leaf(Shape{1, 3}, {2.0, 1.0, 0.0}), {0});
    double expect = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
    CHECK(loss.val()[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(loss.val()[0] == doctest::Approx(0.40760596444438079).epsilon(1e-11));
  }

  SUBCASE("label out of range rejected") {
    Tape<double> tape;
    auto logits = tape.leaf(Shape{1, 3}, {0.0, 0.0, 0.0});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), ContractError);
  }
}

TEST_CASE("contrastive loss analytic values") {
  SUBCASE("matched identical, cross orthogonal, tau=1") {
    Tape<double> tape;
    auto img = tape.leaf(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    auto txt = tape.leaf(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    auto loss = contrastive_loss(img, txt, {0, 1}, 1.0);
    double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(loss.val()[0] == doctest::Approx(expect).epsilon(1e-13));
    CHECK(loss.val()[0] == doctest::Approx(0.31326168751822286).epsilon(1e-11));
  }

  SUBCASE("constant similarity matrix gives ln B") {
    Tape<double> tape;
    // identical unit vectors everywhere -> all sims equal
    auto img = tape.leaf(Shape{3, 2}, {1, 0, 1, 0, 1, 0});
    auto txt = tape.leaf(Shape{3, 2}, {1, 0, 1, 0, 1, 0});
    auto loss = contrastive_loss(img, txt, {0, 1, 2}, 0.5);
    CHECK(loss.val()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  SUBCASE("small tau with perfect diagonal drives loss to zero") {
    Tape<double> tape;
    auto img = tape.leaf(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    auto txt = tape.leaf(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    auto loss = contrastive_loss(img, txt, {0, 1}, 0.01);
    CHECK(loss.val()[0] < 1e-10);
  }

  SUBCASE("B < 2 rejected") {
    Tape<double> tape;
    auto img = tape.leaf(Shape{1, 2}, {1.0, 0.0});
    auto txt = tape.leaf(Shape{1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(contrastive_loss(img, txt, {0}, 1.0), ContractError);
  }

  SUBCASE("same-identity off-diagonal pairs are masked out of the negatives") {
    Tape<double> tape;
    // rows 0 and 1 share an identity; their cross similarity is high but must
    // not act as a negative, so the loss matches the 2-row computation that
    // only sees the true negative (row 2).
    auto img = tape.leaf(Shape{3, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    auto txt = tape.leaf(Shape{3, 2}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    auto loss = contrastive_loss(img, txt, {7, 7, 8}, 1.0);
    // row 0: denom = e^1 (self) + e^0 (row 2) ; row 2: e^1 + 2*e^0
    double r0 = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    double r2 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    double expect = (r0 + r0 + r2) / 3.0;
    CHECK(loss.val()[0] == doctest::Approx(expect).epsilon(1e-13));
  }

  SUBCASE("gradient matches finite differences") {
    ParamStore<double> ps;
    Rng rng(34);
    Tensor<double> fi({4, 3}), ft({4, 3});
    for (auto& v : fi.values) v = rng.uniform(-1, 1);
    for (auto& v : ft.values) v = rng.uniform(-1, 1);
    ps.create("img", fi);
    ps.create("txt", ft);
    auto build = [&](Graph<double>& g) {
      return contrastive_loss(g.param("img"), g.param("txt"), {0, 0, 1, 2}, 0.2);
    };
    auto rep = finite_diff_check<double>(build, ps, 1e-6);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("match loss analytic values") {
  SUBCASE("zero logits give ln 2 per pair") {
    Tape<double> tape;
    auto logits = tape.leaf(Shape{2, 2}, {0, 0, 0, 0});
    auto loss = match_loss(logits, {true, false});
    CHECK(loss.val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }

  SUBCASE("confident correct logits drive loss to zero") {
    Tape<double> tape;
    auto logits = tape.leaf(Shape{2, 2}, {0.0, 60.0, 60.0, 0.0});
    auto loss = match_loss(logits, {true, false});
    CHECK(loss.val()[0] < 1e-10);
  }

  SUBCASE("hand case: positive pair with logit gap 2") {
    Tape<double> tape;
    auto logits = tape.leaf(Shape{1, 2}, {-1.0, 1.0});
    auto loss = match_loss(logits, {true});
    double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
    CHECK(loss.val()[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(loss.val()[0] == doctest::Approx(0.12692801104297263).epsilon(1e-11));
  }
}

TEST_CASE("mine_triplets enumeration oracle: P=2, K=2 gives 8 triples") {
  std::vector<int> labels = {0, 0, 1, 1};
  auto ifeats = unit_instruction_feats(4);
  auto batch = mine_triplets(labels, ifeats, {}, 0, 0.3, MiningMode::All);
  CHECK(batch.count() == 8);
  CHECK(batch.skipped_anchors == 0);
  // exhaustive independent enumeration
  int expect = 0;
  for (int a = 0; a < 4; ++a)
    for (int r1 = 0; r1 < 4; ++r1)
      for (int r2 = 0; r2 < 4; ++r2)
        if (r1 != a && labels[size_t(r1)] == labels[size_t(a)] && r2 != a && r2 != r1) expect += 1;
  CHECK(int(batch.count()) == expect);
  for (const auto& t : batch.triples) {
    CHECK(t.beta1 == doctest::Approx(1.0));  // same identity, identical instruction vectors
    CHECK(labels[size_t(t.anchor)] == labels[size_t(t.r1)]);
  }
}

TEST_CASE("mine_triplets: one-identity batch keeps same-identity r2") {
  std::vector<int> labels = {5, 5, 5};
  auto ifeats = unit_instruction_feats(3);
  ifeats[2] = {0.0, 1.0, 0.0, 0.0};
  auto batch = mine_triplets(labels, ifeats, {}, 0, 0.3, MiningMode::All);
  CHECK(batch.count() == 3u * 2u * 1u);
  bool nonzero_beta2 = false;
  for (const auto& t : batch.triples) {
    CHECK(labels[size_t(t.r2)] == 5);
    // beta2 can be nonzero because r2 shares the identity
    if (t.anchor != 2 && t.r2 != 2) CHECK(t.beta2 == doctest::Approx(1.0));
    if (t.beta2 != 0.0) nonzero_beta2 = true;
  }
  CHECK(nonzero_beta2);
}

TEST_CASE("mine_triplets: hard mode is a subset of all mode and deterministic") {
  Rng rng(35);
  std::vector<int> labels = {0, 0, 0, 1, 1, 1, 2, 2};
  int b = int(labels.size()), c = 5;
  std::vector<double> feats(size_t(b) * c);
  for (auto& v : feats) v = rng.uniform(-1, 1);
  auto ifeats = unit_instruction_feats(b);
  auto all = mine_triplets(labels, ifeats, feats, c, 0.3, MiningMode::All);
  auto hard = mine_triplets(labels, ifeats, feats, c, 0.3, MiningMode::Hard);
  CHECK(hard.count() == size_t(b));
  auto contains = [&](const Triple& t) {
    for (const auto& u : all.triples)
      if (u.anchor == t.anchor && u.r1 == t.r1 && u.r2 == t.r2) return true;
    return false;
  };
  for (const auto& t : hard.triples) CHECK(contains(t));

  auto hard2 = mine_triplets(labels, ifeats, feats, c, 0.3, MiningMode::Hard);
  CHECK(hard.count() == hard2.count());
  for (size_t i = 0; i < hard.count(); ++i) {
    CHECK(hard.triples[i].anchor == hard2.triples[i].anchor);
    CHECK(hard.triples[i].r1 == hard2.triples[i].r1);
    CHECK(hard.triples[i].r2 == hard2.triples[i].r2);
  }
}

TEST_CASE("mine_triplets: anchors without a same-identity partner are skipped with a warning") {
  std::vector<int> labels = {0, 0, 7};
  auto ifeats = unit_instruction_feats(3);
  auto batch = mine_triplets(labels, ifeats, {}, 0, 0.3, MiningMode::All);
  CHECK(batch.skipped_anchors == 1);
  for (const auto& t : batch.triples) CHECK(t.anchor != 2);
}

TEST_CASE("total retrieval loss: additivity and nonnegativity") {
  Rng rng(36);
  ParamStore<double> ps;
  int b = 6, c = 4, ids = 3;
  Tensor<double> f({b, c}), fo({b, c});
  for (auto& v : f.values) v = rng.uniform(-1, 1);
  for (auto& v : fo.values) v = rng.uniform(-1, 1);
  ps.create("f", f);
  ps.create("fo", fo);
  Rng wrng(37);
  ps.create("head.idf.w", Tensor<double>::trunc_normal({c, ids}, wrng, 0.1));
  ps.create("head.idf.b", Shape{ids});
  ps.create("head.idfout.w", Tensor<double>::trunc_normal({c, ids}, wrng, 0.1));
  ps.create("head.idfout.b", Shape{ids});

  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  auto ifeats = unit_instruction_feats(b);
  ifeats[1] = {0.8, 0.6, 0, 0};
  auto batch = mine_triplets(labels, ifeats, f.values, c, 0.3, MiningMode::All);

  Graph<double> g(ps);
  auto vf = g.param("f");
  auto vfo = g.param("fo");
  auto total = total_loss_retrieval(g, vf, vfo, labels, batch);

  Graph<double> g2(ps);
  auto t1 = adaptive_triplet_loss(g2.param("f"), batch);
  auto t2 = identity_loss(g2, "idf", g2.param("f"), labels);
  auto t3 = adaptive_triplet_loss(g2.param("fo"), batch);
  auto t4 = identity_loss(g2, "idfout", g2.param("fo"), labels);
  double sum = g2.value(t1) + g2.value(t2) + g2.value(t3) + g2.value(t4);
  CHECK(std::fabs(g.value(total) - sum) <= 1e-12);
  CHECK(g.value(total) >= 0.0);

  auto build = [&](Graph<double>& gg) {
    return total_loss_retrieval(gg, gg.param("f"), gg.param("fo"), labels, batch);
  };
  auto rep = finite_diff_check<double>(build, ps, 1e-6);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("total t2i loss: additivity and gradient") {
  Rng rng(38);
  ParamStore<double> ps;
  int b = 4, c = 3;
  Tensor<double> fi({b, c}), ft({b, c}), lg({2 * b, 2});
  for (auto& v : fi.values) v = rng.uniform(-1, 1);
  for (auto& v : ft.values) v = rng.uniform(-1, 1);
  for (auto& v : lg.values) v = rng.uniform(-1, 1);
  ps.create("img", fi);
  ps.create("txt", ft);
  ps.create("logits", lg);
  std::vector<int> labels = {0, 1, 2, 3};
  std::vector<bool> positive = {true, true, true, true, false, false, false, false};

  Graph<double> g(ps);
  auto total = total_loss_t2i(g.param("img"), g.param("txt"), g.param("logits"), labels, positive, 0.2);
  Graph<double> g2(ps);
  double sum = g2.value(contrastive_loss(g2.param("img"), g2.param("txt"), labels, 0.2)) +
               g2.value(match_loss(g2.param("logits"), positive));
  CHECK(std::fabs(g.value(total) - sum) <= 1e-12);

  auto build = [&](Graph<double>& gg) {
    return total_loss_t2i(gg.param("img"), gg.param("txt"), gg.param("logits"), labels, positive, 0.2);
  };
  auto rep = finite_diff_check<double>(build, ps, 1e-6);
  CHECK(rep.max_rel_err <= 1e-4);
}
