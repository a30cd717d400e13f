#include "sublm/sched.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sublm/util.hpp"

namespace sublm {

// ---- optimizers ----------------------------------------------------------

void adam_step(NeuralLMParams& params, const NeuralLMParams& grads,
               AdamState& state, double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> g;
  grads.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& m) {
    g.emplace_back(name, &m);
  });
  std::size_t idx = 0;
  params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& theta) {
    const Eigen::MatrixXd& grad = *g[idx++].second;
    auto& [m, v] = state.moments[name];
    if (m.size() == 0) {
      m = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
      v = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    }
    m = state.beta1 * m + (1.0 - state.beta1) * grad;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * grad.array().square())
            .matrix();
    const Eigen::ArrayXXd m_hat = m.array() / bc1;
    const Eigen::ArrayXXd v_hat = v.array() / bc2;
    theta.array() -= lr * m_hat / (v_hat.sqrt() + state.eps);
    if (state.weight_decay != 0.0)
      theta.array() -= lr * state.weight_decay * theta.array();
    if (!theta.allFinite())
      throw std::runtime_error("adam_step: non-finite update in " + name);
  });
}

void sgd_step(NeuralLMParams& params, const NeuralLMParams& grads, double lr,
              double weight_decay) {
  std::vector<const Eigen::MatrixXd*> g;
  grads.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
    g.push_back(&m);
  });
  std::size_t idx = 0;
  params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& theta) {
    theta -= lr * *g[idx++];
    if (weight_decay != 0.0)
      theta.array() -= lr * weight_decay * theta.array();
    if (!theta.allFinite())
      throw std::runtime_error("sgd_step: non-finite update in " + name);
  });
}

// ---- schedules ------------------------------------------------------------

double sgdr_lr(const LRSchedule& schedule, std::size_t batch_in_cycle) {
  if (schedule.cycle_length < 1)
    throw std::invalid_argument("sgdr_lr: cycle_length must be >= 1");
  if (schedule.eta_min > schedule.eta_max)
    throw std::invalid_argument("sgdr_lr: eta_min must be <= eta_max");
  if (batch_in_cycle >= schedule.cycle_length)
    throw std::out_of_range("sgdr_lr: batch_in_cycle past cycle end");
  if (schedule.kind == LRSchedule::Kind::Constant) return schedule.eta_max;
  const double frac = static_cast<double>(batch_in_cycle) /
                      static_cast<double>(schedule.cycle_length);
  return schedule.eta_min +
         0.5 * (schedule.eta_max - schedule.eta_min) *
             (1.0 + std::cos(M_PI * frac));
}

LRSchedule sgdr_schedule(double eta_max, std::size_t cycle_length) {
  LRSchedule s;
  s.kind = LRSchedule::Kind::Sgdr;
  s.eta_max = eta_max;
  s.eta_min = eta_max / 100.0;
  s.cycle_length = cycle_length;
  return s;
}

// ---- lr range test -------------------------------------------------------

LrRangeResult lr_range_test(const std::function<double(double)>& train_step,
                            double lr_lo, double lr_hi, std::size_t steps) {
  if (!(lr_lo > 0.0) || !(lr_lo < lr_hi))
    throw std::invalid_argument("lr_range_test: need 0 < lr_lo < lr_hi");
  if (steps < 10)
    throw std::invalid_argument("lr_range_test: need at least 10 steps");

  const double ratio = std::pow(lr_hi / lr_lo, 1.0 / static_cast<double>(steps));
  const double beta = 0.98;

  LrRangeResult result;
  double ema = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < steps; ++k) {
    const double lr = lr_lo * std::pow(ratio, static_cast<double>(k));
    const double loss = train_step(lr);
    if (!std::isfinite(loss)) {
      if (k == 0)
        throw std::runtime_error(
            "lr_range_test: loss diverged on the first step (lr_lo too high)");
      break;
    }
    ema = beta * ema + (1.0 - beta) * loss;
    const double smoothed =
        ema / (1.0 - std::pow(beta, static_cast<double>(k + 1)));
    result.curve.push_back({lr, loss, smoothed});
    best = std::min(best, smoothed);
    if (smoothed > 4.0 * best) break;
  }

  // highest tested lr where the smoothed loss still went down
  std::size_t pick = result.curve.size();
  for (std::size_t k = result.curve.size(); k-- > 1;) {
    if (result.curve[k].smoothed < result.curve[k - 1].smoothed) {
      pick = k;
      break;
    }
  }
  if (pick == result.curve.size())
    throw std::runtime_error(
        "lr_range_test: smoothed loss never decreased over the sweep");
  result.suggested_lr = result.curve[pick].lr;
  return result;
}

// ---- NT-ASGD ---------------------------------------------------------------

NtAsgdController::NtAsgdController(std::size_t patience) : patience_(patience) {
  if (patience < 1)
    throw std::invalid_argument("NtAsgdController: patience must be >= 1");
}

bool NtAsgdController::report_validation(double loss) {
  bool flipped = false;
  if (!averaging_ && history_.size() >= patience_ + 1) {
    double window_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = history_.size() - patience_; i < history_.size(); ++i)
      window_min = std::min(window_min, history_[i]);
    if (loss >= window_min) {
      averaging_ = true;
      flipped = true;
    }
  }
  history_.push_back(loss);
  return flipped;
}

void NtAsgdController::observe(const NeuralLMParams& params) {
  if (!averaging_) return;
  if (observed_ == 0) {
    sum_ = params;
  } else {
    std::vector<const Eigen::MatrixXd*> src;
    params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
      src.push_back(&m);
    });
    std::size_t idx = 0;
    sum_.for_each_tensor([&](const std::string&, Eigen::MatrixXd& m) {
      m += *src[idx++];
    });
  }
  ++observed_;
}

NeuralLMParams NtAsgdController::effective(
    const NeuralLMParams& current) const {
  if (!averaging_ || observed_ == 0) return current;
  NeuralLMParams avg = sum_;
  const double inv = 1.0 / static_cast<double>(observed_);
  avg.for_each_tensor(
      [&](const std::string&, Eigen::MatrixXd& m) { m *= inv; });
  return avg;
}

// ---- run log ----------------------------------------------------------------

std::string TrainRunLog::batches_csv() const {
  std::ostringstream out;
  out << "step,lr,train_loss\n";
  for (const BatchRow& r : batches)
    out << r.step << ',' << format_double(r.lr) << ','
        << format_double(r.train_loss) << '\n';
  return out.str();
}

std::string TrainRunLog::epochs_csv() const {
  std::ostringstream out;
  out << "epoch,val_loss,val_ppl,seconds\n";
  for (const EpochRow& r : epochs)
    out << r.epoch << ',' << format_double(r.val_loss) << ','
        << format_double(r.val_ppl) << ',' << format_double(r.seconds) << '\n';
  return out.str();
}

void TrainRunLog::save(const std::filesystem::path& batches_path,
                       const std::filesystem::path& epochs_path) const {
  write_file(batches_path.string(), batches_csv());
  write_file(epochs_path.string(), epochs_csv());
}

// ---- driver ----------------------------------------------------------------

double validation_loss(const NeuralLMParams& params,
                       const BatchedStream& stream, std::size_t bptt,
                       std::optional<TokenId> ignore) {
  const DropMasks none = DropMasks::none(params.config, stream.lanes);
  LSTMState state = LSTMState::zeros(params.config, stream.lanes);
  double nll = 0.0;
  std::size_t n = 0;
  for (std::size_t w = 0; w < stream.num_windows(bptt); ++w) {
    ForwardResult f = forward_sequence(stream.inputs(w, bptt), params, state,
                                       none, RunMode::Eval);
    const auto [sum, count] = nll_sum(f.logits, stream.targets(w, bptt), ignore);
    nll += sum;
    n += count;
    state = std::move(f.state);
  }
  if (n == 0) throw std::invalid_argument("validation_loss: nothing to score");
  return nll / static_cast<double>(n);
}

TrainResult train(const NeuralLMConfig& config,
                  std::span<const TokenId> train_ids,
                  std::span<const TokenId> valid_ids,
                  const TrainOptions& options) {
  config.validate();
  if (options.phases.empty())
    throw std::invalid_argument("train: no phases configured");
  if (train_ids.empty() || valid_ids.empty())
    throw std::invalid_argument("train: empty token stream");

  const BatchedStream batches = make_batches(train_ids, config.batch_size);
  const BatchedStream vbatches = make_batches(valid_ids, config.batch_size);
  const std::size_t windows = batches.num_windows(config.bptt_len);

  TrainResult result;
  NeuralLMParams params =
      init_params(config, derive_seed(options.seed, "init"));
  AdamState astate;
  astate.weight_decay = config.weight_decay;
  NtAsgdController controller(options.ntasgd_patience);
  const bool use_adam = options.optimizer == TrainOptions::Optimizer::Adam;

  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epoch_index = 0;
  std::size_t global_step = 0;

  for (const TrainPhase& phase : options.phases) {
    LRSchedule schedule = sgdr_schedule(phase.lr, windows);
    schedule.kind = options.schedule;
    for (std::size_t e = 0; e < phase.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      LSTMState state = LSTMState::zeros(config, batches.lanes);
      for (std::size_t w = 0; w < windows; ++w) {
        const double lr = sgdr_lr(schedule, w);
        const DropMasks masks = sample_masks(
            config, derive_seed(options.seed, "masks:" + std::to_string(global_step)),
            batches.lanes);
        BackwardResult res =
            backward(batches.inputs(w, config.bptt_len),
                     batches.targets(w, config.bptt_len), params, state, masks,
                     options.loss_ignore);
        if (!std::isfinite(res.loss))
          throw std::runtime_error("train: non-finite loss at batch " +
                                   std::to_string(global_step));
        if (use_adam) {
          adam_step(params, res.grads, astate, lr);
        } else {
          sgd_step(params, res.grads, lr, config.weight_decay);
          controller.observe(params);
        }
        result.log.batches.push_back({global_step, lr, res.loss});
        state = options.carry_state ? std::move(res.state)
                                    : LSTMState::zeros(config, batches.lanes);
        ++global_step;
      }

      const NeuralLMParams eval_params =
          use_adam ? params : controller.effective(params);
      const double val_loss = validation_loss(eval_params, vbatches,
                                              config.bptt_len,
                                              options.loss_ignore);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      result.log.epochs.push_back(
          {epoch_index, val_loss, std::exp(val_loss), seconds});
      if (val_loss < result.best_val_loss) {
        result.best_val_loss = val_loss;
        result.best_epoch = epoch_index;
        result.best_params = eval_params;
      }
      if (!use_adam) controller.report_validation(val_loss);
      ++epoch_index;
    }
  }

  result.final_params =
      use_adam ? std::move(params) : controller.effective(params);
  return result;
}

}  // namespace sublm
