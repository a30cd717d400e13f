#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sublm/neural.hpp"

namespace sublm {

// ---- optimizers ----------------------------------------------------------

/// Adam accumulators, one m/v pair per named tensor, created on first use.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: lr*wd*theta subtracted per step
  std::size_t step = 0;
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> moments;
};

/// Bias-corrected Adam update in place; throws with the tensor name on a
/// non-finite result.
void adam_step(NeuralLMParams& params, const NeuralLMParams& grads,
               AdamState& state, double lr);

/// Plain SGD with the same decoupled weight decay.
void sgd_step(NeuralLMParams& params, const NeuralLMParams& grads, double lr,
              double weight_decay);

// ---- learning-rate schedules ----------------------------------------------

struct LRSchedule {
  enum class Kind { Constant, Sgdr };
  Kind kind = Kind::Sgdr;
  double eta_max = 1e-3;
  double eta_min = 1e-5;
  std::size_t cycle_length = 1;  // batches per cycle (one epoch)
};

/// Cosine annealing restarted each cycle: eta_min + (eta_max-eta_min)/2 *
/// (1 + cos(pi * batch_in_cycle / cycle_length)). Constant schedules return
/// eta_max. batch_in_cycle must be < cycle_length.
double sgdr_lr(const LRSchedule& schedule, std::size_t batch_in_cycle);

/// The conventional restart schedule: anneal from lr down to lr/100 over
/// each epoch.
LRSchedule sgdr_schedule(double eta_max, std::size_t cycle_length);

// ---- learning-rate range test ----------------------------------------------

struct LrRangePoint {
  double lr = 0.0;
  double loss = 0.0;      // raw loss returned by the step
  double smoothed = 0.0;  // bias-corrected EMA, beta = 0.98
};

struct LrRangeResult {
  double suggested_lr = 0.0;
  std::vector<LrRangePoint> curve;
};

/// Exponential sweep from lr_lo to lr_hi over `steps` batches: train_step
/// runs one optimization step at the given lr and returns its loss. The
/// sweep stops early once the smoothed loss exceeds 4x its running minimum
/// or turns non-finite; the suggestion is the highest tested lr at which
/// the smoothed loss was still strictly decreasing. Throws when the first
/// step already diverges (lr_lo too high) or no descending region exists.
LrRangeResult lr_range_test(const std::function<double(double)>& train_step,
                            double lr_lo, double lr_hi, std::size_t steps);

// ---- NT-ASGD ---------------------------------------------------------------

/// Non-monotonic trigger: switches (once) from warmup to averaging when a
/// validation loss fails to improve on the minimum of the previous
/// `patience` reports, evaluated only after more than `patience` reports
/// exist. While averaging, effective parameters are the running mean of
/// every observed post-trigger iterate.
class NtAsgdController {
 public:
  explicit NtAsgdController(std::size_t patience = 5);

  bool averaging() const { return averaging_; }
  std::size_t reports() const { return history_.size(); }

  /// Records one validation loss; true when this report flips the mode.
  bool report_validation(double loss);

  /// Call after each optimizer step once averaging (no-op in warmup).
  void observe(const NeuralLMParams& params);

  /// Running mean of observed iterates, or `current` before the trigger.
  NeuralLMParams effective(const NeuralLMParams& current) const;

 private:
  std::size_t patience_;
  std::vector<double> history_;
  bool averaging_ = false;
  NeuralLMParams sum_;
  std::size_t observed_ = 0;
};

// ---- run log ----------------------------------------------------------------

/// Append-only training trace; serialized as two CSVs.
struct TrainRunLog {
  struct BatchRow {
    std::size_t step;
    double lr;
    double train_loss;
  };
  struct EpochRow {
    std::size_t epoch;
    double val_loss;
    double val_ppl;
    double seconds;
  };
  std::vector<BatchRow> batches;
  std::vector<EpochRow> epochs;

  std::string batches_csv() const;  // header step,lr,train_loss
  std::string epochs_csv() const;   // header epoch,val_loss,val_ppl,seconds
  void save(const std::filesystem::path& batches_path,
            const std::filesystem::path& epochs_path) const;
};

// ---- training driver ---------------------------------------------------

struct TrainPhase {
  std::size_t epochs = 20;
  double lr = 1e-3;
};

struct TrainOptions {
  std::vector<TrainPhase> phases{{}};  // run sequentially, one optimizer
  LRSchedule::Kind schedule = LRSchedule::Kind::Sgdr;
  enum class Optimizer { Adam, NtAsgd };
  Optimizer optimizer = Optimizer::Adam;
  std::size_t ntasgd_patience = 5;
  std::uint64_t seed = 0;
  bool carry_state = true;  // false: zero h/c at every window
  std::optional<TokenId> loss_ignore = SubwordVocab::kBos;
};

struct TrainResult {
  NeuralLMParams final_params;  // averaged when NT-ASGD triggered
  NeuralLMParams best_params;   // lowest validation loss
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  TrainRunLog log;
};

/// Epoch loop over BPTT windows: fresh dropout masks per batch, scheduled
/// lr restarted each epoch, validation after every epoch, best + final
/// parameter sets returned. A non-finite training loss aborts with the
/// offending batch index in the message.
TrainResult train(const NeuralLMConfig& config,
                  std::span<const TokenId> train_ids,
                  std::span<const TokenId> valid_ids,
                  const TrainOptions& options);

/// Mean eval-mode loss over the stream (state carried across windows).
double validation_loss(const NeuralLMParams& params,
                       const BatchedStream& stream, std::size_t bptt,
                       std::optional<TokenId> ignore);

}  // namespace sublm
