#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "occ4d/nn/checkpoint.hpp"
#include "occ4d/nn/encoding.hpp"
#include "occ4d/nn/gradcheck.hpp"
#include "occ4d/nn/linear.hpp"
#include "occ4d/nn/losses.hpp"
#include "occ4d/nn/optimizer.hpp"

using namespace occ4d;
using namespace occ4d::nn;

TEST_CASE("linear layer forward basics", "[nn]") {
  Rng rng(1);
  ParameterStore store;
  Linear lin(store, "lin", 3, 3, rng, 0.0);
  // identity weights, zero bias
  for (int i = 0; i < 3; ++i) lin.weight()->value(i, i) = 1.0;
  Tensor x({2, 3});
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  x(0, 2) = 3.0;
  x(1, 0) = -1.0;
  auto y = lin.forward(x);
  CHECK(y.data == x.data);

  lin.bias()->value(1) = 5.0;
  Tensor zero({2, 3});
  auto b = lin.forward(zero);
  CHECK(b(0, 1) == 5.0);
  CHECK(b(1, 1) == 5.0);
  CHECK(b(0, 0) == 0.0);

  Tensor bad({2, 4});
  CHECK_THROWS_AS(lin.forward(bad), std::invalid_argument);
}

TEST_CASE("linear and mlp pass finite-difference checks at 1e-6", "[nn]") {
  Rng rng(2);
  ParameterStore store;
  Linear lin(store, "lin", 8, 16, rng, 0.3);
  Mlp mlp(store, "mlp", {8, 16, 4}, rng, 0.3);
  Tensor x({5, 8});
  fill_normal(x, rng, 1.0);

  auto loss = [&]() {
    // deterministic scalar reduction with fixed coefficients
    auto y1 = lin.forward(x);
    Mlp::Ctx c2;
    auto y2 = mlp.forward(x, &c2);
    double l = 0.0;
    for (std::size_t i = 0; i < y1.numel(); ++i) l += y1(i) * std::sin(0.1 * (i + 1));
    for (std::size_t i = 0; i < y2.numel(); ++i) l += y2(i) * y2(i) * 0.25;
    return l;
  };

  store.zero_grads();
  Linear::Ctx c1;
  auto y1 = lin.forward(x, &c1);
  Tensor dy1(y1.shape);
  for (std::size_t i = 0; i < dy1.numel(); ++i) dy1(i) = std::sin(0.1 * (i + 1));
  lin.backward(c1, dy1);

  Mlp::Ctx c2;
  auto y2 = mlp.forward(x, &c2);
  Tensor dy2(y2.shape);
  for (std::size_t i = 0; i < dy2.numel(); ++i) dy2(i) = 0.5 * y2(i);
  mlp.backward(c2, dy2);

  std::vector<Parameter*> params;
  for (Parameter& p : store) params.push_back(&p);
  auto report = finite_difference_check(loss, params, 1e-4, 20, &rng);
  INFO("worst " << report.worst_param << " err " << report.max_rel_err);
  CHECK(report.pass(1e-6));
}

TEST_CASE("gradcheck catches a corrupted backward", "[nn]") {
  Rng rng(3);
  ParameterStore store;
  Linear lin(store, "lin", 4, 4, rng, 0.5);
  Tensor x({3, 4});
  fill_normal(x, rng, 1.0);
  auto loss = [&]() {
    auto y = lin.forward(x);
    double l = 0;
    for (double v : y.data) l += v * v;
    return l;
  };
  store.zero_grads();
  Linear::Ctx c;
  auto y = lin.forward(x, &c);
  Tensor dy(y.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) dy(i) = 2.0 * y(i);
  lin.backward(c, dy);
  lin.weight()->grad(0, 0) += 0.5;  // deliberate corruption
  std::vector<Parameter*> params{lin.weight(), lin.bias()};
  auto report = finite_difference_check(loss, params, 1e-4, 64, &rng);
  CHECK_FALSE(report.pass(1e-5));
  CHECK(report.worst_param == "lin.w");
}

TEST_CASE("focal loss", "[nn]") {
  SECTION("confident correct predictions drive the loss to zero") {
    Tensor logits({2, 3});
    logits(0, 1) = 40.0;
    logits(1, 2) = 40.0;
    auto res = focal_loss(logits, {1, 2});
    CHECK(res.loss == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("gamma=0, alpha=1 equals mean cross-entropy") {
    Rng rng(5);
    Tensor logits({6, 4});
    fill_normal(logits, rng, 1.5);
    std::vector<int> targets{0, 3, 1, 2, 2, 0};
    auto res = focal_loss(logits, targets, 0.0, 1.0);
    double ce = 0.0;
    for (int i = 0; i < 6; ++i) {
      double m = logits(i, 0);
      for (int k = 1; k < 4; ++k) m = std::max(m, logits(i, k));
      double z = 0;
      for (int k = 0; k < 4; ++k) z += std::exp(logits(i, k) - m);
      ce += -(logits(i, targets[i]) - m - std::log(z)) / 6.0;
    }
    CHECK(res.loss == Catch::Approx(ce).epsilon(1e-12));
  }
  SECTION("invalid target id is an error") {
    Tensor logits({1, 3});
    CHECK_THROWS_AS(focal_loss(logits, {3}), std::invalid_argument);
  }
  SECTION("finite-difference gradient agreement at 1e-6") {
    Rng rng(7);
    ParameterStore store;
    Parameter* logits = store.add("logits", {16, 5});
    fill_normal(logits->value, rng, 1.0);
    std::vector<int> targets(16);
    for (auto& t : targets) t = static_cast<int>(rng() % 5);
    auto loss = [&]() { return focal_loss(logits->value, targets).loss; };
    store.zero_grads();
    logits->grad = focal_loss(logits->value, targets).dlogits;
    auto report = finite_difference_check(loss, {logits}, 1e-4, 80, &rng);
    CHECK(report.pass(1e-6));
  }
}

TEST_CASE("softmax rows sum to one and masked entries vanish", "[nn]") {
  Rng rng(9);
  std::vector<double> scores(32), w(32);
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& s : scores) s = std::uniform_real_distribution<double>(-30, 30)(rng);
    scores[trial % 32] += -1e9;  // masked entry
    softmax_row(scores.data(), w.data(), 32);
    double sum = 0;
    for (double v : w) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(w[trial % 32] < 1e-30);
  }
}

TEST_CASE("positional encoding 4d", "[nn]") {
  PositionalEncoding4d pe(64);
  SECTION("origin at t=0 alternates (0, 1)") {
    Tensor pos({1, 3});
    auto enc = pe.forward(pos, {0});
    for (std::size_t i = 0; i < 64; i += 2) {
      CHECK(enc(0, i) == 0.0);
      CHECK(enc(0, i + 1) == 1.0);
    }
  }
  SECTION("deterministic and t-block structure") {
    Tensor pos({2, 3});
    pos(0, 0) = pos(1, 0) = 1.5;
    pos(0, 1) = pos(1, 1) = -2.0;
    pos(0, 2) = pos(1, 2) = 0.5;
    auto a = pe.forward(pos, {1, 3});
    auto b = pe.forward(pos, {1, 3});
    CHECK(a.data == b.data);
    // rows differ only in the final quarter (the t block)
    for (std::size_t c = 0; c < 48; ++c) CHECK(a(0, c) == a(1, c));
    double diff = 0;
    for (std::size_t c = 48; c < 64; ++c) diff += std::abs(a(0, c) - a(1, c));
    CHECK(diff > 1e-6);
  }
  SECTION("D not divisible by 8 is rejected") {
    CHECK_THROWS_AS(PositionalEncoding4d(20), std::invalid_argument);
  }
  SECTION("position gradient matches finite differences") {
    Rng rng(13);
    ParameterStore store;
    Parameter* pos = store.add("pos", {4, 3});
    fill_normal(pos->value, rng, 2.0);
    std::vector<int> ts{0, 1, 2, 3};
    Tensor coeff({4, 64});
    fill_normal(coeff, rng, 1.0);
    auto loss = [&]() {
      auto enc = pe.forward(pos->value, ts);
      double l = 0;
      for (std::size_t i = 0; i < enc.numel(); ++i) l += enc(i) * coeff(i);
      return l;
    };
    store.zero_grads();
    pos->grad = pe.backward(pos->value, ts, coeff);
    auto report = finite_difference_check(loss, {pos}, 1e-4, 12, &rng);
    CHECK(report.pass(1e-6));
  }
}

TEST_CASE("l2 loss and gradient", "[nn]") {
  std::vector<double> pred{1.0, 2.0, -0.5};
  std::vector<double> target{0.5, 2.0, 0.5};
  std::vector<double> dpred;
  const double loss = l2_loss(pred, target, &dpred);
  CHECK(loss == Catch::Approx(0.25 + 0.0 + 1.0));
  CHECK(dpred[0] == Catch::Approx(1.0));
  CHECK(dpred[1] == 0.0);
  CHECK(dpred[2] == Catch::Approx(-2.0));
  CHECK(l2_loss(pred, pred) == 0.0);
  CHECK_THROWS_AS(l2_loss(pred, {1.0}), std::invalid_argument);
}

TEST_CASE("lr schedule endpoints", "[nn]") {
  LrSchedule sched{2e-4, 2e-6, 100, 1000};
  CHECK(sched.at(0) == 0.0);
  CHECK(sched.at(100) == Catch::Approx(2e-4));
  CHECK(sched.at(1000) == Catch::Approx(2e-6));
  CHECK(sched.at(5000) == Catch::Approx(2e-6));
  CHECK(sched.at(550) < 2e-4);
  CHECK(sched.at(550) > 2e-6);
}

TEST_CASE("adamw applies decoupled weight decay", "[nn]") {
  ParameterStore store;
  Parameter* p = store.add("p", {1});
  p->value(0) = 1.0;
  p->grad(0) = 0.0;
  AdamW opt;
  opt.weight_decay = 0.5;
  opt.step(store, 0.1);
  // zero gradient: only the decay term moves the weight
  CHECK(p->value(0) == Catch::Approx(1.0 - 0.1 * 0.5 * 1.0));
}

TEST_CASE("checkpoint round trip is bit exact", "[nn]") {
  Rng rng(21);
  ParameterStore store;
  Parameter* a = store.add("a", {3, 4});
  Parameter* b = store.add("b", {7});
  fill_normal(a->value, rng, 1.0);
  fill_normal(b->value, rng, 1.0);
  a->value(0) = 0.1 + 0.2;  // a value with a non-trivial binary expansion
  AdamW opt;
  for (int s = 0; s < 3; ++s) {
    for (Parameter& p : store)
      for (std::size_t i = 0; i < p.grad.numel(); ++i)
        p.grad(i) = std::uniform_real_distribution<double>(-1, 1)(rng);
    opt.step(store, 1e-3);
  }
  CheckpointExtras extras;
  extras.ints["epoch"] = {7};
  extras.ints["timestamps"] = {0, 1, 1, 4};
  extras.doubles["last_loss"] = {3.14159};

  const auto path = std::filesystem::temp_directory_path() / "occ4d_ckpt_test.bin";
  save_checkpoint(path.string(), store, &opt, extras);

  ParameterStore store2;
  Parameter* a2 = store2.add("a", {3, 4});
  Parameter* b2 = store2.add("b", {7});
  AdamW opt2;
  auto loaded = load_checkpoint(path.string(), store2, &opt2);
  CHECK(a2->value.data == a->value.data);
  CHECK(b2->value.data == b->value.data);
  CHECK(opt2.step_count() == opt.step_count());
  CHECK(opt2.moment1()[0].data == opt.moment1()[0].data);
  CHECK(opt2.moment2()[1].data == opt.moment2()[1].data);
  CHECK(loaded.int_scalar("epoch") == 7);
  CHECK(loaded.ints.at("timestamps") == std::vector<std::int64_t>{0, 1, 1, 4});
  CHECK(loaded.doubles.at("last_loss")[0] == 3.14159);

  ParameterStore wrong;
  wrong.add("a", {3, 4});
  CHECK_THROWS(load_checkpoint(path.string(), wrong));
  std::filesystem::remove(path);
}
