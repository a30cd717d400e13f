#include <doctest.h>

#include <cmath>
#include <vector>

#include "sublm/sched.hpp"
#include "sublm/util.hpp"
#include "support/testutil.hpp"

using namespace sublm;

namespace {

NeuralLMConfig micro_config() {
  NeuralLMConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 2;
  cfg.hidden_dim = 3;
  cfg.num_layers = 1;
  cfg.bptt_len = 4;
  cfg.batch_size = 2;
  cfg.tie_weights = false;
  return cfg;
}

// every entry of every tensor through one flat visitor
std::vector<double> flatten(const NeuralLMParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
    out.insert(out.end(), m.data(), m.data() + m.size());
  });
  return out;
}

void fill_grads(NeuralLMParams& grads, std::uint64_t seed) {
  Rng rng(seed);
  grads.for_each_tensor([&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.uniform(-1.0, 1.0);
  });
}

}  // namespace

TEST_CASE("adam first step has a closed form") {
  const double lr = 0.01, wd = 0.1, eps = 1e-8;
  NeuralLMParams params = init_params(micro_config(), 3);
  NeuralLMParams grads = params.zeros_like();
  fill_grads(grads, 99);

  const std::vector<double> theta0 = flatten(params), g = flatten(grads);
  AdamState state;
  state.weight_decay = wd;
  adam_step(params, grads, state, lr);
  CHECK(state.step == 1);

  // with bias correction the first update is lr * g/(|g|+eps), and the
  // decoupled decay then shrinks the updated value
  const std::vector<double> theta1 = flatten(params);
  REQUIRE(theta1.size() == theta0.size());
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    const double after_adam =
        theta0[i] - lr * g[i] / (std::abs(g[i]) + eps);
    const double expect = after_adam - lr * wd * after_adam;
    CHECK(theta1[i] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("adam later steps follow the moment recursions") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  NeuralLMParams params = init_params(micro_config(), 4);
  NeuralLMParams g1 = params.zeros_like(), g2 = params.zeros_like();
  fill_grads(g1, 1);
  fill_grads(g2, 2);

  const std::vector<double> theta0 = flatten(params);
  const std::vector<double> v1 = flatten(g1), v2 = flatten(g2);

  AdamState state;  // no decay here, isolating the moment arithmetic
  adam_step(params, g1, state, lr);
  adam_step(params, g2, state, lr);
  CHECK(state.step == 2);

  const std::vector<double> theta2 = flatten(params);
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    double m = 0.0, v = 0.0, th = theta0[i];
    const double gs[2] = {v1[i], v2[i]};
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * gs[t - 1];
      v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
      const double mh = m / (1 - std::pow(b1, t));
      const double vh = v / (1 - std::pow(b2, t));
      th -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK(theta2[i] == doctest::Approx(th).epsilon(1e-9));
  }
}

TEST_CASE("sgd step is descent plus decoupled decay") {
  const double lr = 0.1, wd = 0.02;
  NeuralLMParams params = init_params(micro_config(), 5);
  NeuralLMParams grads = params.zeros_like();
  fill_grads(grads, 7);

  const std::vector<double> theta0 = flatten(params), g = flatten(grads);
  sgd_step(params, grads, lr, wd);
  const std::vector<double> theta1 = flatten(params);
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    const double stepped = theta0[i] - lr * g[i];
    CHECK(theta1[i] ==
          doctest::Approx(stepped - lr * wd * stepped).epsilon(1e-12));
  }

  // zero decay leaves pure descent
  NeuralLMParams p2 = init_params(micro_config(), 5);
  sgd_step(p2, grads, lr, 0.0);
  const std::vector<double> t2 = flatten(p2);
  for (std::size_t i = 0; i < theta0.size(); ++i)
    CHECK(t2[i] == doctest::Approx(theta0[i] - lr * g[i]).epsilon(1e-12));
}

TEST_CASE("cosine restart schedule hits its closed form") {
  LRSchedule s;
  s.kind = LRSchedule::Kind::Sgdr;
  s.eta_max = 1.0;
  s.eta_min = 0.01;
  s.cycle_length = 10;

  auto closed = [&](std::size_t b) {
    return s.eta_min + 0.5 * (s.eta_max - s.eta_min) *
                           (1.0 + std::cos(M_PI * static_cast<double>(b) /
                                           static_cast<double>(s.cycle_length)));
  };
  CHECK(sgdr_lr(s, 0) == doctest::Approx(closed(0)).epsilon(1e-12));
  CHECK(sgdr_lr(s, 0) == doctest::Approx(s.eta_max).epsilon(1e-12));
  CHECK(sgdr_lr(s, 5) == doctest::Approx(closed(5)).epsilon(1e-12));
  CHECK(sgdr_lr(s, 5) ==
        doctest::Approx(0.5 * (s.eta_max + s.eta_min)).epsilon(1e-12));
  CHECK(sgdr_lr(s, 9) == doctest::Approx(closed(9)).epsilon(1e-12));

  // monotone decay within one cycle
  for (std::size_t b = 1; b < 10; ++b) CHECK(sgdr_lr(s, b) < sgdr_lr(s, b - 1));

  SUBCASE("constant schedules and the convenience constructor") {
    LRSchedule c = s;
    c.kind = LRSchedule::Kind::Constant;
    CHECK(sgdr_lr(c, 0) == 1.0);
    CHECK(sgdr_lr(c, 9) == 1.0);

    const LRSchedule conv = sgdr_schedule(0.5, 7);
    CHECK(conv.eta_max == 0.5);
    CHECK(conv.eta_min == 0.5 / 100.0);
    CHECK(conv.cycle_length == 7);
    CHECK(conv.kind == LRSchedule::Kind::Sgdr);
  }

  SUBCASE("invalid schedules are rejected") {
    LRSchedule bad = s;
    bad.cycle_length = 0;
    CHECK_THROWS_AS(sgdr_lr(bad, 0), std::invalid_argument);

    bad = s;
    bad.eta_min = 2.0;
    CHECK_THROWS_AS(sgdr_lr(bad, 0), std::invalid_argument);

    CHECK_THROWS_AS(sgdr_lr(s, 10), std::out_of_range);
  }
}

TEST_CASE("range test finds the edge of stability on a quadratic") {
  // one plain gradient-descent step on f(x) = (k/2) x^2 from x0 = 1 gives
  // post-step loss (k/2)(1 - lr k)^2: flat near lr=0, minimum at lr = 1/k,
  // divergence past 2/k. With k = 20 the usable region ends near 0.05.
  const double k = 20.0;
  auto probe = [k](double lr) {
    const double t = 1.0 - lr * k;
    return 0.5 * k * t * t;
  };

  const LrRangeResult r = lr_range_test(probe, 1e-7, 10.0, 100);
  CHECK(r.suggested_lr < 0.1);
  CHECK(r.suggested_lr > 1e-4);
  CHECK(r.curve.size() < 100);  // the 4x-minimum rule stops the sweep early

  // the suggestion is the last point that still improved on its predecessor
  std::size_t pick = 0;
  for (std::size_t i = r.curve.size(); i-- > 1;) {
    if (r.curve[i].smoothed < r.curve[i - 1].smoothed) {
      pick = i;
      break;
    }
  }
  REQUIRE(pick > 0);
  CHECK(r.suggested_lr == r.curve[pick].lr);

  // lrs ascend geometrically
  for (std::size_t i = 1; i < r.curve.size(); ++i)
    CHECK(r.curve[i].lr > r.curve[i - 1].lr);
}

TEST_CASE("range test failure modes") {
  CHECK_THROWS_WITH_AS(
      lr_range_test([](double) { return std::nan(""); }, 1e-5, 1.0, 50),
      doctest::Contains("first step"), std::runtime_error);

  CHECK_THROWS_WITH_AS(lr_range_test([](double lr) { return lr; }, 1e-5, 1e3,
                                     50),
                       doctest::Contains("never decreased"),
                       std::runtime_error);

  auto ok = [](double) { return 1.0; };
  CHECK_THROWS_AS(lr_range_test(ok, 1e-5, 1.0, 9), std::invalid_argument);
  CHECK_THROWS_AS(lr_range_test(ok, 0.0, 1.0, 50), std::invalid_argument);
  CHECK_THROWS_AS(lr_range_test(ok, 1.0, 0.5, 50), std::invalid_argument);
}

TEST_CASE("averaging trigger waits out the patience window") {
  SUBCASE("fires exactly when a loss stops improving") {
    NtAsgdController ctl(5);
    const double trace[] = {5.0, 4.0, 4.1, 4.2, 4.3, 4.4};
    for (double v : trace) {
      CHECK(!ctl.report_validation(v));
      CHECK(!ctl.averaging());
    }
    // 7th report: window minimum is 4.0, and 4.5 fails to beat it
    CHECK(ctl.report_validation(4.5));
    CHECK(ctl.averaging());
    // the flip is one-way and reported once
    CHECK(!ctl.report_validation(100.0));
    CHECK(ctl.averaging());
  }

  SUBCASE("a run that keeps improving never triggers") {
    NtAsgdController ctl(5);
    for (int i = 0; i < 50; ++i)
      CHECK(!ctl.report_validation(5.0 - 0.05 * i));
    CHECK(!ctl.averaging());
  }

  SUBCASE("effective parameters average the post-trigger iterates") {
    NtAsgdController ctl(1);
    const NeuralLMConfig cfg = micro_config();
    NeuralLMParams current = init_params(cfg, 1);

    // before the trigger observe() must be a no-op and effective() must
    // hand back the live parameters unchanged
    ctl.observe(current);
    const std::vector<double> live = flatten(current);
    CHECK(flatten(ctl.effective(current)) == live);

    ctl.report_validation(1.0);
    ctl.report_validation(0.9);
    ctl.report_validation(0.95);  // >= min(0.9) -> trigger
    REQUIRE(ctl.averaging());

    auto constant_params = [&](double v) {
      NeuralLMParams p = init_params(cfg, 1);
      p.for_each_tensor(
          [&](const std::string&, Eigen::MatrixXd& m) { m.setConstant(v); });
      return p;
    };
    ctl.observe(constant_params(1.0));
    ctl.observe(constant_params(2.0));
    ctl.observe(constant_params(6.0));
    const std::vector<double> avg = flatten(ctl.effective(current));
    for (double v : avg) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
  }

  CHECK_THROWS_AS(NtAsgdController(0), std::invalid_argument);
}

TEST_CASE("run log serializes to plain csv") {
  TrainRunLog log;
  log.batches.push_back({0, 0.5, 2.0});
  log.batches.push_back({1, 0.25, 1.5});
  log.epochs.push_back({0, 2.0, 8.0, 1.5});

  CHECK(log.batches_csv() == "step,lr,train_loss\n0,0.5,2\n1,0.25,1.5\n");
  CHECK(log.epochs_csv() == "epoch,val_loss,val_ppl,seconds\n0,2,8,1.5\n");

  testsupport::TempDir dir;
  log.save(dir / "b.csv", dir / "e.csv");
  CHECK(read_file((dir / "b.csv").string()) == log.batches_csv());
  CHECK(read_file((dir / "e.csv").string()) == log.epochs_csv());
}

TEST_CASE("training loop runs, logs and reproduces itself") {
  NeuralLMConfig cfg = micro_config();
  cfg.vocab_size = 12;

  // token stream with some structure: ascending runs restarted at random
  Rng rng(5);
  std::vector<TokenId> train_ids, valid_ids;
  auto fill = [&](std::vector<TokenId>& out, std::size_t n) {
    TokenId t = 3;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(t);
      t = rng.bernoulli(0.8) ? 3 + (t - 3 + 1) % 9 : 3;
    }
  };
  fill(train_ids, 200);
  fill(valid_ids, 60);

  TrainOptions opt;
  opt.phases = {{2, 1e-3}};
  opt.seed = 11;

  const TrainResult r1 = train(cfg, train_ids, valid_ids, opt);
  const std::size_t windows =
      make_batches(train_ids, cfg.batch_size).num_windows(cfg.bptt_len);
  REQUIRE(r1.log.epochs.size() == 2);
  CHECK(r1.log.batches.size() == 2 * windows);

  for (const auto& row : r1.log.batches) CHECK(std::isfinite(row.train_loss));
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_at = 0;
  for (const auto& row : r1.log.epochs) {
    CHECK(std::isfinite(row.val_loss));
    CHECK(row.val_ppl == doctest::Approx(std::exp(row.val_loss)));
    if (row.val_loss < best) {
      best = row.val_loss;
      best_at = row.epoch;
    }
  }
  CHECK(r1.best_val_loss == best);
  CHECK(r1.best_epoch == best_at);

  // the schedule restarts every epoch at the phase lr
  CHECK(r1.log.batches[0].lr == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(r1.log.batches[windows].lr == doctest::Approx(1e-3).epsilon(1e-12));

  SUBCASE("identical seeds give identical traces") {
    const TrainResult r2 = train(cfg, train_ids, valid_ids, opt);
    REQUIRE(r2.log.batches.size() == r1.log.batches.size());
    for (std::size_t i = 0; i < r1.log.batches.size(); ++i)
      CHECK(r2.log.batches[i].train_loss == r1.log.batches[i].train_loss);
    for (std::size_t i = 0; i < r1.log.epochs.size(); ++i)
      CHECK(r2.log.epochs[i].val_loss == r1.log.epochs[i].val_loss);
    CHECK(flatten(r2.final_params) == flatten(r1.final_params));
  }

  SUBCASE("a different seed trains differently") {
    TrainOptions other = opt;
    other.seed = 12;
    const TrainResult r3 = train(cfg, train_ids, valid_ids, other);
    CHECK(r3.log.batches[0].train_loss != r1.log.batches[0].train_loss);
  }

  SUBCASE("the averaging optimizer also makes progress") {
    TrainOptions asgd = opt;
    asgd.optimizer = TrainOptions::Optimizer::NtAsgd;
    asgd.ntasgd_patience = 1;
    asgd.phases = {{3, 0.5}};
    asgd.schedule = LRSchedule::Kind::Constant;
    const TrainResult r4 = train(cfg, train_ids, valid_ids, asgd);
    CHECK(r4.log.epochs.size() == 3);
    for (const auto& row : r4.log.epochs) CHECK(std::isfinite(row.val_loss));
  }

  SUBCASE("two phases chain their epochs") {
    TrainOptions two = opt;
    two.phases = {{1, 1e-3}, {2, 1e-4}};
    const TrainResult r5 = train(cfg, train_ids, valid_ids, two);
    REQUIRE(r5.log.epochs.size() == 3);
    CHECK(r5.log.epochs[2].epoch == 2);
    // second phase anneals from its own lr
    CHECK(r5.log.batches[windows].lr == doctest::Approx(1e-4).epsilon(1e-12));
  }

  CHECK_THROWS_AS(train(cfg, {}, valid_ids, opt), std::invalid_argument);
  TrainOptions none = opt;
  none.phases.clear();
  CHECK_THROWS_AS(train(cfg, train_ids, valid_ids, none),
                  std::invalid_argument);
}
