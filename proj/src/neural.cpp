#include "sublm/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sublm/util.hpp"

namespace sublm {

// ---- config / params ----------------------------------------------------

void NeuralLMConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (embed_dim < 1 || hidden_dim < 1 || num_layers < 1)
    throw std::invalid_argument("model dimensions must be >= 1");
  if (bptt_len < 1 || batch_size < 1)
    throw std::invalid_argument("bptt_len and batch_size must be >= 1");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
  if (dropout_multiplier < 0)
    throw std::invalid_argument("dropout_multiplier must be >= 0");
  const double probs[] = {weight_drop_p, embed_drop_p, input_drop_p,
                          hidden_drop_p, output_drop_p};
  for (double p : probs) {
    if (p < 0 || p >= 1 || effective(p) >= 1)
      throw std::invalid_argument(
          "dropout probabilities (after the multiplier) must lie in [0,1)");
  }
}

void NeuralLMParams::for_each_tensor(
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
  fn("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    fn(p + ".W", layers[l].W);
    fn(p + ".U", layers[l].U);
    fn(p + ".b", layers[l].b);
  }
  if (!config.tie_weights) fn("out_proj", out_proj);
  fn("out_bias", out_bias);
}

void NeuralLMParams::for_each_tensor(
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn)
    const {
  const_cast<NeuralLMParams*>(this)->for_each_tensor(
      [&](const std::string& name, Eigen::MatrixXd& m) {
        fn(name, static_cast<const Eigen::MatrixXd&>(m));
      });
}

NeuralLMParams NeuralLMParams::zeros_like() const {
  NeuralLMParams z;
  z.config = config;
  z.embedding = Eigen::MatrixXd::Zero(embedding.rows(), embedding.cols());
  z.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    z.layers[l].W = Eigen::MatrixXd::Zero(layers[l].W.rows(), layers[l].W.cols());
    z.layers[l].U = Eigen::MatrixXd::Zero(layers[l].U.rows(), layers[l].U.cols());
    z.layers[l].b = Eigen::MatrixXd::Zero(layers[l].b.rows(), 1);
  }
  if (!config.tie_weights)
    z.out_proj = Eigen::MatrixXd::Zero(out_proj.rows(), out_proj.cols());
  z.out_bias = Eigen::MatrixXd::Zero(out_bias.rows(), 1);
  return z;
}

NeuralLMParams init_params(const NeuralLMConfig& config, std::uint64_t seed) {
  config.validate();
  NeuralLMParams p;
  p.config = config;
  Rng rng(seed);
  const double r = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  auto fill = [&](Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
    m.resize(rows, cols);
    // column-major fill so the draw order matches the storage order
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-r, r);
  };
  fill(p.embedding, static_cast<Eigen::Index>(config.vocab_size),
       static_cast<Eigen::Index>(config.embed_dim));
  p.layers.resize(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto in = static_cast<Eigen::Index>(config.layer_input_dim(l));
    const auto out = static_cast<Eigen::Index>(config.layer_output_dim(l));
    fill(p.layers[l].W, 4 * out, in);
    fill(p.layers[l].U, 4 * out, out);
    p.layers[l].b = Eigen::MatrixXd::Zero(4 * out, 1);
  }
  if (!config.tie_weights)
    fill(p.out_proj, static_cast<Eigen::Index>(config.vocab_size),
         static_cast<Eigen::Index>(config.layer_output_dim(config.num_layers - 1)));
  p.out_bias =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(config.vocab_size), 1);
  return p;
}

LSTMState LSTMState::zeros(const NeuralLMConfig& config, std::size_t lanes) {
  LSTMState s;
  s.h.resize(config.num_layers);
  s.c.resize(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto out = static_cast<Eigen::Index>(config.layer_output_dim(l));
    s.h[l] = Eigen::MatrixXd::Zero(out, static_cast<Eigen::Index>(lanes));
    s.c[l] = Eigen::MatrixXd::Zero(out, static_cast<Eigen::Index>(lanes));
  }
  return s;
}

// ---- masks ----------------------------------------------------------------

DropMasks DropMasks::none(const NeuralLMConfig& config, std::size_t lanes) {
  DropMasks m;
  const auto b = static_cast<Eigen::Index>(lanes);
  m.u_mask.resize(config.num_layers);
  m.in_mask.resize(config.num_layers);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto in = static_cast<Eigen::Index>(config.layer_input_dim(l));
    const auto out = static_cast<Eigen::Index>(config.layer_output_dim(l));
    m.u_mask[l] = Eigen::MatrixXd::Ones(4 * out, out);
    m.in_mask[l] = Eigen::MatrixXd::Ones(in, b);
  }
  m.out_mask = Eigen::MatrixXd::Ones(
      static_cast<Eigen::Index>(config.layer_output_dim(config.num_layers - 1)),
      b);
  m.embed_mask =
      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(config.vocab_size));
  return m;
}

DropMasks sample_masks(const NeuralLMConfig& config, std::uint64_t seed,
                       std::size_t lanes) {
  config.validate();
  DropMasks m = DropMasks::none(config, lanes);
  Rng rng(seed);
  auto drop = [&](Eigen::MatrixXd& mask, double base_p) {
    const double p = config.effective(base_p);
    if (p == 0.0) return;
    const double scale = 1.0 / (1.0 - p);
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        mask(i, j) = rng.uniform() < p ? 0.0 : scale;
  };
  // fixed draw order: embedding rows, then per layer U and input, then output
  {
    const double p = config.effective(config.embed_drop_p);
    if (p > 0.0) {
      const double scale = 1.0 / (1.0 - p);
      for (Eigen::Index i = 0; i < m.embed_mask.size(); ++i)
        m.embed_mask(i) = rng.uniform() < p ? 0.0 : scale;
    }
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    drop(m.u_mask[l], config.weight_drop_p);
    drop(m.in_mask[l], l == 0 ? config.input_drop_p : config.hidden_drop_p);
  }
  drop(m.out_mask, config.output_drop_p);
  return m;
}

// ---- forward ----------------------------------------------------------

namespace {

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) {
  return 1.0 / (1.0 + (-x).exp());
}

// Everything backward needs from one layer's unrolled pass.
struct LayerCache {
  Eigen::MatrixXd x;      // in x T*B, after input mask
  Eigen::MatrixXd gates;  // 4out x T*B, post-activation [i;f;o;g]
  Eigen::MatrixXd hprev;  // out x T*B, state entering each step
  Eigen::MatrixXd cprev;  // out x T*B
  Eigen::MatrixXd tanh_c; // out x T*B
  Eigen::MatrixXd h;      // out x T*B, outputs before the next input mask
  Eigen::MatrixXd u_masked;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Eigen::MatrixXd out;  // top output after output mask, width x T*B
};

// Core unrolled pass. masks == nullptr means eval (no dropout at all).
ForwardResult run_forward(const IdWindow& inputs, const NeuralLMParams& params,
                          const LSTMState& state, const DropMasks* masks,
                          ForwardCache* cache) {
  const NeuralLMConfig& cfg = params.config;
  const std::size_t T = inputs.steps, B = inputs.lanes;
  if (T == 0 || B == 0)
    throw std::invalid_argument("forward_sequence: empty window");
  if (state.h.size() != cfg.num_layers || state.c.size() != cfg.num_layers)
    throw std::invalid_argument("forward_sequence: state/config layer mismatch");
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    if (state.h[l].cols() != static_cast<Eigen::Index>(B) ||
        state.h[l].rows() != static_cast<Eigen::Index>(cfg.layer_output_dim(l)))
      throw std::invalid_argument("forward_sequence: state/batch shape mismatch");
  }
  const auto TB = static_cast<Eigen::Index>(T * B);

  // embedding lookup, with row dropout and the first variational mask
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cfg.embed_dim), TB);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t lane = 0; lane < B; ++lane) {
      const TokenId id = inputs.at(t, lane);
      if (id >= cfg.vocab_size)
        throw std::out_of_range("token id " + std::to_string(id) +
                                " out of range for vocab " +
                                std::to_string(cfg.vocab_size));
      const auto col = static_cast<Eigen::Index>(t * B + lane);
      x.col(col) = params.embedding.row(static_cast<Eigen::Index>(id)).transpose();
      if (masks) x.col(col) *= masks->embed_mask(static_cast<Eigen::Index>(id));
    }
  }

  if (cache) cache->layers.resize(cfg.num_layers);
  LSTMState out_state = state;

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto out = static_cast<Eigen::Index>(cfg.layer_output_dim(l));
    if (masks) {
      for (std::size_t t = 0; t < T; ++t)
        x.middleCols(static_cast<Eigen::Index>(t * B), static_cast<Eigen::Index>(B))
            .array() *= masks->in_mask[l].array();
    }
    const Eigen::MatrixXd u_masked =
        masks ? (masks->u_mask[l].array() * params.layers[l].U.array()).matrix()
              : params.layers[l].U;

    // one GEMM for the input contribution of every step
    Eigen::MatrixXd pre = params.layers[l].W * x;
    pre.colwise() += params.layers[l].b.col(0);

    LayerCache lc;
    if (cache) {
      lc.x = std::move(x);
      lc.gates.resize(4 * out, TB);
      lc.hprev.resize(out, TB);
      lc.cprev.resize(out, TB);
      lc.tanh_c.resize(out, TB);
    }
    Eigen::MatrixXd h_all(out, TB);

    Eigen::MatrixXd h = out_state.h[l], c = out_state.c[l];
    for (std::size_t t = 0; t < T; ++t) {
      const auto c0 = static_cast<Eigen::Index>(t * B);
      const auto bb = static_cast<Eigen::Index>(B);
      Eigen::MatrixXd s = pre.middleCols(c0, bb) + u_masked * h;
      Eigen::ArrayXXd gi = sigmoid(s.topRows(out).array());
      Eigen::ArrayXXd gf = sigmoid(s.middleRows(out, out).array());
      Eigen::ArrayXXd go = sigmoid(s.middleRows(2 * out, out).array());
      Eigen::ArrayXXd gg = s.bottomRows(out).array().tanh();
      if (cache) {
        lc.hprev.middleCols(c0, bb) = h;
        lc.cprev.middleCols(c0, bb) = c;
      }
      c = (gi * gg + gf.array() * c.array()).matrix();
      const Eigen::ArrayXXd tc = c.array().tanh();
      h = (go * tc).matrix();
      if (cache) {
        lc.gates.middleCols(c0, bb).topRows(out) = gi.matrix();
        lc.gates.middleCols(c0, bb).middleRows(out, out) = gf.matrix();
        lc.gates.middleCols(c0, bb).middleRows(2 * out, out) = go.matrix();
        lc.gates.middleCols(c0, bb).bottomRows(out) = gg.matrix();
        lc.tanh_c.middleCols(c0, bb) = tc.matrix();
      }
      h_all.middleCols(c0, bb) = h;
    }
    out_state.h[l] = h;
    out_state.c[l] = c;
    if (cache) {
      lc.h = h_all;
      lc.u_masked = u_masked;
      cache->layers[l] = std::move(lc);
    }
    x = std::move(h_all);
  }

  if (masks) {
    for (std::size_t t = 0; t < T; ++t)
      x.middleCols(static_cast<Eigen::Index>(t * B), static_cast<Eigen::Index>(B))
          .array() *= masks->out_mask.array();
  }
  if (cache) cache->out = x;

  ForwardResult r;
  r.logits = params.output_matrix() * x;
  r.logits.colwise() += params.out_bias.col(0);
  r.state = std::move(out_state);
  return r;
}

}  // namespace

void lstm_cell(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
               const Eigen::MatrixXd& c_prev, const LstmLayer& layer,
               const Eigen::MatrixXd& u_mask, Eigen::MatrixXd& h_out,
               Eigen::MatrixXd& c_out) {
  if (!x.allFinite() || !h_prev.allFinite() || !c_prev.allFinite())
    throw std::invalid_argument("lstm_cell: non-finite input");
  const Eigen::Index out = h_prev.rows();
  Eigen::MatrixXd s = layer.W * x + (u_mask.array() * layer.U.array()).matrix() * h_prev;
  s.colwise() += layer.b.col(0);
  const Eigen::ArrayXXd gi = sigmoid(s.topRows(out).array());
  const Eigen::ArrayXXd gf = sigmoid(s.middleRows(out, out).array());
  const Eigen::ArrayXXd go = sigmoid(s.middleRows(2 * out, out).array());
  const Eigen::ArrayXXd gg = s.bottomRows(out).array().tanh();
  c_out = (gi * gg + gf * c_prev.array()).matrix();
  h_out = (go * c_out.array().tanh()).matrix();
}

ForwardResult forward_sequence(const IdWindow& inputs,
                               const NeuralLMParams& params,
                               const LSTMState& state, const DropMasks& masks,
                               RunMode mode) {
  return run_forward(inputs, params, state,
                     mode == RunMode::Train ? &masks : nullptr, nullptr);
}

// ---- loss ----------------------------------------------------------------

std::pair<double, std::size_t> nll_sum(const Eigen::MatrixXd& logits,
                                       const IdWindow& targets,
                                       std::optional<TokenId> ignore) {
  if (logits.cols() != static_cast<Eigen::Index>(targets.steps * targets.lanes))
    throw std::invalid_argument("nll_sum: logits/targets shape mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index col = 0; col < logits.cols(); ++col) {
    const TokenId tgt = targets.ids[static_cast<std::size_t>(col)];
    if (ignore && tgt == *ignore) continue;
    if (tgt >= static_cast<TokenId>(logits.rows()))
      throw std::out_of_range("target id out of range");
    const auto c = logits.col(col).array();
    const double m = c.maxCoeff();
    const double lse = m + std::log((c - m).exp().sum());
    sum += lse - c(static_cast<Eigen::Index>(tgt));
    ++n;
  }
  return {sum, n};
}

double cross_entropy_loss(const Eigen::MatrixXd& logits,
                          const IdWindow& targets,
                          std::optional<TokenId> ignore) {
  const auto [sum, n] = nll_sum(logits, targets, ignore);
  if (n == 0)
    throw std::invalid_argument("cross_entropy_loss: every target ignored");
  return sum / static_cast<double>(n);
}

// ---- backward -----------------------------------------------------------

BackwardResult backward(const IdWindow& inputs, const IdWindow& targets,
                        const NeuralLMParams& params,
                        const LSTMState& state_in, const DropMasks& masks,
                        std::optional<TokenId> ignore) {
  const NeuralLMConfig& cfg = params.config;
  const std::size_t T = inputs.steps, B = inputs.lanes;
  if (targets.steps != T || targets.lanes != B)
    throw std::invalid_argument("backward: inputs/targets shape mismatch");

  ForwardCache cache;
  ForwardResult fwd = run_forward(inputs, params, state_in, &masks, &cache);

  BackwardResult res;
  res.grads = params.zeros_like();
  res.state = std::move(fwd.state);

  const auto TB = static_cast<Eigen::Index>(T * B);
  const auto V = static_cast<Eigen::Index>(cfg.vocab_size);

  // d(mean loss)/d(logits): softmax - onehot on counted columns
  std::size_t counted = 0;
  for (std::size_t k = 0; k < targets.ids.size(); ++k)
    if (!ignore || targets.ids[k] != *ignore) ++counted;
  if (counted == 0)
    throw std::invalid_argument("backward: every target ignored");
  const double inv_n = 1.0 / static_cast<double>(counted);

  Eigen::MatrixXd dlogits(V, TB);
  double loss = 0.0;
  for (Eigen::Index col = 0; col < TB; ++col) {
    const TokenId tgt = targets.ids[static_cast<std::size_t>(col)];
    if (ignore && tgt == *ignore) {
      dlogits.col(col).setZero();
      continue;
    }
    const auto c = fwd.logits.col(col).array();
    const double m = c.maxCoeff();
    const Eigen::ArrayXd e = (c - m).exp();
    const double z = e.sum();
    loss += m + std::log(z) - c(static_cast<Eigen::Index>(tgt));
    dlogits.col(col) = (e / z).matrix() * inv_n;
    dlogits(static_cast<Eigen::Index>(tgt), col) -= inv_n;
  }
  res.loss = loss * inv_n;
  res.count = counted;

  // decoder
  res.grads.out_bias.col(0) = dlogits.rowwise().sum();
  Eigen::MatrixXd d_dec = dlogits * cache.out.transpose();  // V x top width
  Eigen::MatrixXd dx = params.output_matrix().transpose() * dlogits;
  if (cfg.tie_weights) res.grads.embedding += d_dec;
  else res.grads.out_proj = std::move(d_dec);
  for (std::size_t t = 0; t < T; ++t)
    dx.middleCols(static_cast<Eigen::Index>(t * B), static_cast<Eigen::Index>(B))
        .array() *= masks.out_mask.array();

  // stacked layers, top down; dx holds d(loss)/d(layer output h_all)
  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const auto out = static_cast<Eigen::Index>(cfg.layer_output_dim(li));
    const auto bb = static_cast<Eigen::Index>(B);

    Eigen::MatrixXd dgates(4 * out, TB);
    Eigen::MatrixXd dc_carry = Eigen::MatrixXd::Zero(out, bb);
    Eigen::MatrixXd dh_rec = Eigen::MatrixXd::Zero(out, bb);
    for (std::size_t t = T; t-- > 0;) {
      const auto c0 = static_cast<Eigen::Index>(t * B);
      const auto gi = lc.gates.middleCols(c0, bb).topRows(out).array();
      const auto gf = lc.gates.middleCols(c0, bb).middleRows(out, out).array();
      const auto go = lc.gates.middleCols(c0, bb).middleRows(2 * out, out).array();
      const auto gg = lc.gates.middleCols(c0, bb).bottomRows(out).array();
      const auto tc = lc.tanh_c.middleCols(c0, bb).array();

      const Eigen::ArrayXXd dh = dx.middleCols(c0, bb).array() + dh_rec.array();
      const Eigen::ArrayXXd dc =
          dh * go * (1.0 - tc * tc) + dc_carry.array();

      dgates.middleCols(c0, bb).topRows(out) =
          (dc * gg * gi * (1.0 - gi)).matrix();
      dgates.middleCols(c0, bb).middleRows(out, out) =
          (dc * lc.cprev.middleCols(c0, bb).array() * gf * (1.0 - gf)).matrix();
      dgates.middleCols(c0, bb).middleRows(2 * out, out) =
          (dh * tc * go * (1.0 - go)).matrix();
      dgates.middleCols(c0, bb).bottomRows(out) =
          (dc * gi * (1.0 - gg * gg)).matrix();

      dc_carry = (dc * gf).matrix();
      dh_rec = lc.u_masked.transpose() * dgates.middleCols(c0, bb);
    }
    // truncation: dh_rec / dc_carry for the carried-in state are dropped

    res.grads.layers[li].W = dgates * lc.x.transpose();
    res.grads.layers[li].U =
        (masks.u_mask[li].array() *
         (dgates * lc.hprev.transpose()).array()).matrix();
    res.grads.layers[li].b.col(0) = dgates.rowwise().sum();

    dx = params.layers[li].W.transpose() * dgates;
    for (std::size_t t = 0; t < T; ++t)
      dx.middleCols(static_cast<Eigen::Index>(t * B), bb).array() *=
          masks.in_mask[li].array();
  }

  // scatter into embedding rows through the row mask
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t lane = 0; lane < B; ++lane) {
      const TokenId id = inputs.at(t, lane);
      const auto col = static_cast<Eigen::Index>(t * B + lane);
      res.grads.embedding.row(static_cast<Eigen::Index>(id)) +=
          masks.embed_mask(static_cast<Eigen::Index>(id)) *
          dx.col(col).transpose();
    }
  }

  res.grads.for_each_tensor([](const std::string& name, Eigen::MatrixXd& g) {
    if (!g.allFinite())
      throw std::runtime_error("non-finite gradient in " + name);
  });
  return res;
}

// ---- finite differences ----------------------------------------------

FdCheckResult fd_gradient_check(const IdWindow& inputs,
                                const IdWindow& targets,
                                const NeuralLMParams& params,
                                const LSTMState& state_in,
                                const DropMasks& masks, double step,
                                std::optional<TokenId> ignore) {
  const BackwardResult analytic =
      backward(inputs, targets, params, state_in, masks, ignore);

  NeuralLMParams work = params;
  auto loss_at = [&]() {
    const ForwardResult f =
        forward_sequence(inputs, work, state_in, masks, RunMode::Train);
    return cross_entropy_loss(f.logits, targets, ignore);
  };

  FdCheckResult result;
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> work_tensors;
  work.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& m) {
    work_tensors.emplace_back(name, &m);
  });
  std::vector<const Eigen::MatrixXd*> grad_tensors;
  analytic.grads.for_each_tensor(
      [&](const std::string&, const Eigen::MatrixXd& g) {
        grad_tensors.push_back(&g);
      });

  for (std::size_t k = 0; k < work_tensors.size(); ++k) {
    Eigen::MatrixXd& m = *work_tensors[k].second;
    const Eigen::MatrixXd& g = *grad_tensors[k];
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double orig = m(i, j);
        m(i, j) = orig + step;
        const double up = loss_at();
        m(i, j) = orig - step;
        const double down = loss_at();
        m(i, j) = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double a = g(i, j);
        const double rel = std::abs(a - numeric) /
                           std::max({1.0, std::abs(a), std::abs(numeric)});
        if (rel > result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_tensor = work_tensors[k].first;
        }
      }
    }
  }
  return result;
}

// ---- batching ------------------------------------------------------------

BatchedStream make_batches(std::span<const TokenId> ids,
                           std::size_t batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  const std::size_t lane_len = ids.size() / batch_size;
  if (lane_len < 2)
    throw std::invalid_argument(
        "stream too short: " + std::to_string(ids.size()) + " tokens for " +
        std::to_string(batch_size) + " lanes");
  BatchedStream s;
  s.lanes = batch_size;
  s.lane_len = lane_len;
  s.step_major.resize(lane_len * batch_size);
  for (std::size_t t = 0; t < lane_len; ++t)
    for (std::size_t lane = 0; lane < batch_size; ++lane)
      s.step_major[t * batch_size + lane] = ids[lane * lane_len + t];
  return s;
}

std::size_t BatchedStream::num_windows(std::size_t bptt) const {
  if (bptt < 1) throw std::invalid_argument("bptt must be >= 1");
  return (lane_len - 1 + bptt - 1) / bptt;
}

IdWindow BatchedStream::inputs(std::size_t window, std::size_t bptt) const {
  const std::size_t start = window * bptt;
  if (start >= lane_len - 1) throw std::out_of_range("window out of range");
  IdWindow w;
  w.steps = std::min(bptt, lane_len - 1 - start);
  w.lanes = lanes;
  w.ids.assign(step_major.begin() + static_cast<std::ptrdiff_t>(start * lanes),
               step_major.begin() +
                   static_cast<std::ptrdiff_t>((start + w.steps) * lanes));
  return w;
}

IdWindow BatchedStream::targets(std::size_t window, std::size_t bptt) const {
  const std::size_t start = window * bptt + 1;
  IdWindow w;
  w.steps = std::min(bptt, lane_len - start);
  w.lanes = lanes;
  w.ids.assign(step_major.begin() + static_cast<std::ptrdiff_t>(start * lanes),
               step_major.begin() +
                   static_cast<std::ptrdiff_t>((start + w.steps) * lanes));
  return w;
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'S', 'B', 'L', 'M', 'C', 'K', 'P', '1'};

nlohmann::json config_to_json(const NeuralLMConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},
          {"bptt_len", c.bptt_len},
          {"batch_size", c.batch_size},
          {"dropout_multiplier", c.dropout_multiplier},
          {"weight_decay", c.weight_decay},
          {"weight_drop_p", c.weight_drop_p},
          {"embed_drop_p", c.embed_drop_p},
          {"input_drop_p", c.input_drop_p},
          {"hidden_drop_p", c.hidden_drop_p},
          {"output_drop_p", c.output_drop_p},
          {"tie_weights", c.tie_weights}};
}

NeuralLMConfig config_from_json(const nlohmann::json& j) {
  NeuralLMConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.bptt_len = j.at("bptt_len").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.dropout_multiplier = j.at("dropout_multiplier").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.weight_drop_p = j.at("weight_drop_p").get<double>();
  c.embed_drop_p = j.at("embed_drop_p").get<double>();
  c.input_drop_p = j.at("input_drop_p").get<double>();
  c.hidden_drop_p = j.at("hidden_drop_p").get<double>();
  c.output_drop_p = j.at("output_drop_p").get<double>();
  c.tie_weights = j.at("tie_weights").get<bool>();
  return c;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const NeuralLMParams& params,
                     const std::map<std::string, std::string>& metadata) {
  nlohmann::json header;
  header["config"] = config_to_json(params.config);
  header["metadata"] = metadata;
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  header["tensors"] = std::move(tensors);
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCkptMagic, 8);
  const std::uint32_t len = static_cast<std::uint32_t>(head.size());
  const unsigned char lenb[4] = {
      static_cast<unsigned char>(len & 0xFF),
      static_cast<unsigned char>((len >> 8) & 0xFF),
      static_cast<unsigned char>((len >> 16) & 0xFF),
      static_cast<unsigned char>((len >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(lenb), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
    // column-major doubles; this build targets little-endian IEEE-754 hosts
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double)) * m.size());
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path.string());
  if (data.size() < 12 || std::memcmp(data.data(), kCkptMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint (bad magic): " + path.string());
  const auto* lb = reinterpret_cast<const unsigned char*>(data.data() + 8);
  const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                            (static_cast<std::uint32_t>(lb[1]) << 8) |
                            (static_cast<std::uint32_t>(lb[2]) << 16) |
                            (static_cast<std::uint32_t>(lb[3]) << 24);
  if (data.size() < 12 + len)
    throw std::runtime_error("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ck;
  ck.params.config = config_from_json(header.at("config"));
  for (auto it = header.at("metadata").begin(); it != header.at("metadata").end();
       ++it)
    ck.metadata[it.key()] = it.value().get<std::string>();

  // allocate per config, then fill in header order (which must match)
  ck.params = [&] {
    NeuralLMParams tmp = init_params(ck.params.config, 0);
    return tmp.zeros_like();
  }();
  std::size_t offset = 12 + len;
  std::size_t idx = 0;
  const auto& tensors = header.at("tensors");
  ck.params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& m) {
    if (idx >= tensors.size())
      throw std::runtime_error("checkpoint missing tensor " + name);
    const auto& t = tensors[idx++];
    if (t.at("name").get<std::string>() != name ||
        t.at("rows").get<Eigen::Index>() != m.rows() ||
        t.at("cols").get<Eigen::Index>() != m.cols())
      throw std::runtime_error("checkpoint tensor mismatch at " + name);
    const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(m.size());
    if (data.size() < offset + bytes)
      throw std::runtime_error("truncated checkpoint data at " + name);
    std::memcpy(m.data(), data.data() + offset, bytes);
    offset += bytes;
  });
  if (idx != tensors.size())
    throw std::runtime_error("checkpoint has extra tensors: " + path.string());
  return ck;
}

}  // namespace sublm
