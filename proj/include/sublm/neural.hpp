#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sublm/subword.hpp"

namespace sublm {

/// Model shape plus regularization knobs. The five *_drop_p fields are base
/// probabilities; the actual rate applied everywhere is
/// dropout_multiplier * base, so one scalar scales the whole family.
struct NeuralLMConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 400;
  std::size_t hidden_dim = 1150;
  std::size_t num_layers = 3;
  std::size_t bptt_len = 70;
  std::size_t batch_size = 32;
  double dropout_multiplier = 0.5;
  double weight_decay = 0.1;
  double weight_drop_p = 0.5;  // DropConnect on recurrent U matrices
  double embed_drop_p = 0.1;   // whole embedding rows
  double input_drop_p = 0.6;   // first layer input, variational
  double hidden_drop_p = 0.5;  // between stacked layers, variational
  double output_drop_p = 0.4;  // before the softmax projection, variational
  bool tie_weights = true;     // share embedding with the output projection

  double effective(double base_p) const { return dropout_multiplier * base_p; }
  /// Input width of layer l (embedding below layer 0).
  std::size_t layer_input_dim(std::size_t l) const {
    return l == 0 ? embed_dim : hidden_dim;
  }
  /// Output width of layer l; the top layer shrinks to embed_dim under tying.
  std::size_t layer_output_dim(std::size_t l) const {
    return (tie_weights && l + 1 == num_layers) ? embed_dim : hidden_dim;
  }
  /// Throws std::invalid_argument on impossible shapes or rates.
  void validate() const;
};

/// One stacked-gate LSTM layer: rows of W/U/b hold the four gates in the
/// order [input; forget; output; candidate], each hidden_dim rows tall.
struct LstmLayer {
  Eigen::MatrixXd W;  // 4*out x in
  Eigen::MatrixXd U;  // 4*out x out
  Eigen::MatrixXd b;  // 4*out x 1
};

/// All trainable tensors. Under weight tying out_proj stays empty and the
/// embedding doubles as the output projection (one logical tensor).
struct NeuralLMParams {
  NeuralLMConfig config;
  Eigen::MatrixXd embedding;  // vocab x embed
  std::vector<LstmLayer> layers;
  Eigen::MatrixXd out_proj;  // vocab x top width; empty when tied
  Eigen::MatrixXd out_bias;  // vocab x 1

  const Eigen::MatrixXd& output_matrix() const {
    return config.tie_weights ? embedding : out_proj;
  }

  /// Visits every trainable tensor with a stable name: "embedding",
  /// "layer<l>.W" / ".U" / ".b", "out_proj" (untied only), "out_bias".
  /// The same order drives optimizer state, checkpoints and the
  /// finite-difference check.
  void for_each_tensor(
      const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&,
                                                const Eigen::MatrixXd&)>& fn)
      const;

  /// Same shapes, all zeros — the gradient container.
  NeuralLMParams zeros_like() const;
};

/// Deterministic uniform init in [-1/sqrt(hidden_dim), +1/sqrt(hidden_dim)]
/// for weight matrices; biases start at zero.
NeuralLMParams init_params(const NeuralLMConfig& config, std::uint64_t seed);

/// Per-layer h and c, one column per batch lane. Zeroed at run start,
/// carried (detached) across consecutive windows.
struct LSTMState {
  std::vector<Eigen::MatrixXd> h, c;
  static LSTMState zeros(const NeuralLMConfig& config, std::size_t lanes);
};

/// Inverted-scaled dropout masks, entries in {0, 1/keep}. in_mask[0] uses
/// input_drop_p, in_mask[l>0] hidden_drop_p; each is one mask per sequence
/// reused at every time step (variational).
struct DropMasks {
  std::vector<Eigen::MatrixXd> u_mask;   // per layer, 4*out x out
  std::vector<Eigen::MatrixXd> in_mask;  // per layer, in_dim x lanes
  Eigen::MatrixXd out_mask;              // top width x lanes
  Eigen::VectorXd embed_mask;            // vocab; zeroes whole rows

  /// Identity masks (scale 1 everywhere) — the eval-mode masks.
  static DropMasks none(const NeuralLMConfig& config, std::size_t lanes);
};

/// Fresh masks for one batch/window. Throws on probabilities outside [0,1).
DropMasks sample_masks(const NeuralLMConfig& config, std::uint64_t seed,
                       std::size_t lanes);

/// One cell step: i,f,o = sigmoid, candidate = tanh of the stacked
/// preactivation W x + (u_mask .* U) h_prev + b; c = i.*cand + f.*c_prev;
/// h = o .* tanh(c). Throws on non-finite input.
void lstm_cell(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
               const Eigen::MatrixXd& c_prev, const LstmLayer& layer,
               const Eigen::MatrixXd& u_mask, Eigen::MatrixXd& h_out,
               Eigen::MatrixXd& c_out);

/// A bptt window of token ids, `steps` time steps by `lanes` batch lanes,
/// stored step-major.
struct IdWindow {
  std::size_t steps = 0, lanes = 0;
  std::vector<TokenId> ids;
  TokenId at(std::size_t t, std::size_t lane) const {
    return ids[t * lanes + lane];
  }
};

enum class RunMode { Train, Eval };

/// Logits for every position as one vocab x (steps*lanes) matrix, column
/// t*lanes + lane, plus the detached carry-out state. Train mode applies
/// the masks; eval mode ignores them entirely.
struct ForwardResult {
  Eigen::MatrixXd logits;
  LSTMState state;
};

ForwardResult forward_sequence(const IdWindow& inputs,
                               const NeuralLMParams& params,
                               const LSTMState& state, const DropMasks& masks,
                               RunMode mode);

/// Sum of -log softmax(target) and the number of counted positions;
/// targets equal to `ignore` are skipped.
std::pair<double, std::size_t> nll_sum(const Eigen::MatrixXd& logits,
                                       const IdWindow& targets,
                                       std::optional<TokenId> ignore);

/// Mean over counted positions (batch and time flattened into one axis).
double cross_entropy_loss(const Eigen::MatrixXd& logits,
                          const IdWindow& targets,
                          std::optional<TokenId> ignore = std::nullopt);

/// Truncated-BPTT gradients of the mean loss: runs its own train-mode
/// forward, then backpropagates through the window only (no gradient into
/// state_in; masks are constants). Throws with the tensor name if any
/// gradient turns non-finite.
struct BackwardResult {
  double loss = 0.0;
  std::size_t count = 0;  // counted target positions
  NeuralLMParams grads;
  LSTMState state;
};

BackwardResult backward(const IdWindow& inputs, const IdWindow& targets,
                        const NeuralLMParams& params,
                        const LSTMState& state_in, const DropMasks& masks,
                        std::optional<TokenId> ignore = std::nullopt);

/// Central-difference gradient check over every tensor entry (step h):
/// rel = |analytic - numeric| / max(1, |analytic|, |numeric|).
struct FdCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
};

FdCheckResult fd_gradient_check(const IdWindow& inputs,
                                const IdWindow& targets,
                                const NeuralLMParams& params,
                                const LSTMState& state_in,
                                const DropMasks& masks, double step = 1e-5,
                                std::optional<TokenId> ignore = std::nullopt);

// ---- batching -----------------------------------------------------------

/// The encoded stream rearranged into batch_size contiguous lanes: lane l
/// holds tokens [l*chunk, (l+1)*chunk) of the original stream, and windows
/// slice all lanes in parallel. Targets are inputs shifted one step.
struct BatchedStream {
  std::size_t lanes = 0;
  std::size_t lane_len = 0;           // tokens per lane
  std::vector<TokenId> step_major;    // position t, lane l at t*lanes+l

  /// Number of bptt windows covering positions 0..lane_len-2.
  std::size_t num_windows(std::size_t bptt) const;
  IdWindow inputs(std::size_t window, std::size_t bptt) const;
  IdWindow targets(std::size_t window, std::size_t bptt) const;
};

/// Drops the stream tail that does not fill every lane. Throws when the
/// stream is too short to give each lane two tokens.
BatchedStream make_batches(std::span<const TokenId> ids,
                           std::size_t batch_size);

// ---- checkpoints ----------------------------------------------------------

/// Versioned container: magic, JSON header (config, metadata, tensor
/// shapes), then each tensor's entries column-major as little-endian
/// 64-bit floats.
void save_checkpoint(const std::filesystem::path& path,
                     const NeuralLMParams& params,
                     const std::map<std::string, std::string>& metadata);

struct Checkpoint {
  NeuralLMParams params;
  std::map<std::string, std::string> metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sublm
