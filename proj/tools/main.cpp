// Command-line front end: corpus -> tokenizer -> models -> evaluation.
// Every subcommand resolves its settings as defaults <- --config file <-
// explicit flags, stamps the resolved-config hash into its artifacts, and
// writes a run_config.txt sidecar into the output directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sublm/corpus.hpp"
#include "sublm/eval.hpp"
#include "sublm/ngram.hpp"
#include "sublm/runconfig.hpp"
#include "sublm/sched.hpp"
#include "sublm/subword.hpp"
#include "sublm/util.hpp"

namespace fs = std::filesystem;
using namespace sublm;

namespace {

struct CommandCtx {
  RunConfig cfg;
  std::vector<std::pair<std::string, std::string>> pending;
  std::string command;

  explicit CommandCtx(std::string name, std::vector<RunConfig::KeySpec> specs)
      : cfg(std::move(specs)), command(std::move(name)) {}
};

// One --<key> option per declared key, recorded only when actually given.
void bind_keys(CLI::App* sub, CommandCtx& ctx) {
  for (const auto& spec : ctx.cfg.specs()) {
    sub->add_option_function<std::string>(
           "--" + spec.name,
           [&ctx, name = spec.name](const std::string& v) {
             ctx.pending.emplace_back(name, v);
           },
           spec.help + " (default: " +
               (spec.default_value.empty() ? "none" : spec.default_value) + ")");
  }
}

void resolve(CommandCtx& ctx, const std::string& config_path) {
  if (!config_path.empty()) ctx.cfg.load_file(config_path);
  for (const auto& [k, v] : ctx.pending) ctx.cfg.set(k, v);
}

fs::path prepare_out(const std::string& out_dir, const CommandCtx& ctx) {
  fs::path dir(out_dir);
  fs::create_directories(dir);
  write_file((dir / "run_config.txt").string(),
             "command=" + ctx.command + "\nconfig_hash=" + ctx.cfg.hash() +
                 "\n" + ctx.cfg.serialized());
  return dir;
}

void stamp(std::map<std::string, std::string>& meta, const CommandCtx& ctx) {
  meta["command"] = ctx.command;
  meta["config_hash"] = ctx.cfg.hash();
  meta["seed"] = ctx.cfg.get("seed");
}

CorpusFormat parse_format(const std::string& v) {
  if (v == "jsonl") return CorpusFormat::Jsonl;
  if (v == "textdir") return CorpusFormat::TextDir;
  throw std::invalid_argument("config key 'format': '" + v +
                              "' is not jsonl/textdir");
}

QtMode parse_qt(const std::string& v) {
  if (v == "prev-word") return QtMode::PrevWord;
  if (v == "prev-pair") return QtMode::PrevPair;
  throw std::invalid_argument("config key 'qt': '" + v +
                              "' is not prev-word/prev-pair");
}

const std::string& required(const RunConfig& cfg, const std::string& key) {
  const std::string& v = cfg.get(key);
  if (v.empty())
    throw std::invalid_argument("config key '" + key + "' is required");
  return v;
}

// shared model-shape keys for train-neural and lr-find
std::vector<RunConfig::KeySpec> model_keys() {
  return {
      {"embed_dim", "400", "embedding width"},
      {"hidden_dim", "1150", "LSTM units per layer"},
      {"num_layers", "3", "stacked LSTM layers"},
      {"bptt_len", "70", "backpropagation-through-time window"},
      {"batch_size", "32", "parallel lanes"},
      {"dropout_multiplier", "0.5", "scales every dropout probability"},
      {"weight_decay", "0.1", "decoupled weight decay"},
      {"weight_drop_p", "0.5", "base DropConnect rate on recurrent weights"},
      {"embed_drop_p", "0.1", "base embedding-row dropout"},
      {"input_drop_p", "0.6", "base first-layer input dropout"},
      {"hidden_drop_p", "0.5", "base between-layer dropout"},
      {"output_drop_p", "0.4", "base pre-softmax dropout"},
      {"tie_weights", "true", "share embedding and output projection"},
  };
}

NeuralLMConfig model_from_cfg(const RunConfig& cfg, std::size_t vocab_size) {
  NeuralLMConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = cfg.get_u64("embed_dim");
  c.hidden_dim = cfg.get_u64("hidden_dim");
  c.num_layers = cfg.get_u64("num_layers");
  c.bptt_len = cfg.get_u64("bptt_len");
  c.batch_size = cfg.get_u64("batch_size");
  c.dropout_multiplier = cfg.get_double("dropout_multiplier");
  c.weight_decay = cfg.get_double("weight_decay");
  c.weight_drop_p = cfg.get_double("weight_drop_p");
  c.embed_drop_p = cfg.get_double("embed_drop_p");
  c.input_drop_p = cfg.get_double("input_drop_p");
  c.hidden_drop_p = cfg.get_double("hidden_drop_p");
  c.output_drop_p = cfg.get_double("output_drop_p");
  c.tie_weights = cfg.get_bool("tie_weights");
  c.validate();
  return c;
}

// ---- command bodies --------------------------------------------------------

void run_stats(CommandCtx& ctx, const std::string& out_dir) {
  const Corpus corpus = ingest_corpus(required(ctx.cfg, "corpus"),
                                      parse_format(ctx.cfg.get("format")));
  const std::string csv = stats_to_csv(corpus_stats(corpus));
  const fs::path dir = prepare_out(out_dir, ctx);
  write_file((dir / "stats.csv").string(), csv);
  std::cout << csv;
}

void run_split(CommandCtx& ctx, const std::string& out_dir) {
  const Corpus corpus = ingest_corpus(required(ctx.cfg, "corpus"),
                                      parse_format(ctx.cfg.get("format")));
  const auto [train, heldout] =
      split_holdout(corpus, ctx.cfg.get_double("fraction"),
                    ctx.cfg.get_u64("seed"), ctx.cfg.get_bool("stratify"));
  const fs::path dir = prepare_out(out_dir, ctx);
  write_jsonl(dir / "train.jsonl", train);
  write_jsonl(dir / "heldout.jsonl", heldout);
  std::cout << "train " << train.size() << " docs, heldout " << heldout.size()
            << " docs\n";
}

void run_train_tokenizer(CommandCtx& ctx, const std::string& out_dir) {
  const Corpus corpus = ingest_corpus(required(ctx.cfg, "corpus"),
                                      parse_format(ctx.cfg.get("format")));
  const std::string mode = ctx.cfg.get("mode");
  SubwordVocab vocab;
  if (mode == "subword") {
    TokenizerConfig tc;
    tc.target_vocab_size = ctx.cfg.get_u64("vocab_size");
    tc.seed_vocab_size = ctx.cfg.get_u64("seed_vocab_size");
    tc.prune_fraction = ctx.cfg.get_double("prune_fraction");
    tc.max_piece_length = ctx.cfg.get_u64("max_piece_length");
    tc.min_token_frequency = ctx.cfg.get_u64("min_frequency");
    tc.max_em_iterations = ctx.cfg.get_u64("max_em_iterations");
    tc.em_rel_tolerance = ctx.cfg.get_double("em_tolerance");
    vocab = em_train(corpus, tc);
  } else if (mode == "word") {
    vocab = word_tokenize(corpus, ctx.cfg.get_u64("vocab_size"),
                          ctx.cfg.get_u64("min_frequency"));
  } else {
    throw std::invalid_argument("config key 'mode': '" + mode +
                                "' is not subword/word");
  }
  stamp(vocab.metadata, ctx);
  const fs::path dir = prepare_out(out_dir, ctx);
  vocab.save(dir / "vocab.tsv");
  std::cout << "vocabulary of " << vocab.size() << " tokens -> "
            << (dir / "vocab.tsv").string() << "\n";
}

void run_tokenize(CommandCtx& ctx, const std::string& out_dir) {
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const std::string& input = required(ctx.cfg, "input");
  const bool markers = ctx.cfg.get_bool("markers");
  std::vector<TokenId> ids;
  if (ctx.cfg.get("format") == "text") {
    for (const std::string& line : split(read_file(input), '\n')) {
      if (normalize_text(line).empty()) continue;
      const std::vector<TokenId> enc = encode(line, vocab, markers);
      ids.insert(ids.end(), enc.begin(), enc.end());
    }
  } else {
    for (const Document& doc :
         ingest_corpus(input, parse_format(ctx.cfg.get("format"))).documents) {
      const std::vector<TokenId> enc = encode(doc.text, vocab, markers);
      ids.insert(ids.end(), enc.begin(), enc.end());
    }
  }
  const fs::path dir = prepare_out(out_dir, ctx);
  write_id_stream(dir / "ids.bin", ids);
  std::cout << ids.size() << " tokens -> " << (dir / "ids.bin").string()
            << "\n";
}

void run_train_ngram(CommandCtx& ctx, const std::string& out_dir) {
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const std::vector<TokenId> train_ids =
      read_id_stream(required(ctx.cfg, "train"));
  const std::vector<TokenId> heldout_ids =
      read_id_stream(required(ctx.cfg, "heldout"));

  NgramCounts counts =
      count_ngrams(train_ids, static_cast<int>(ctx.cfg.get_u64("order")));
  InterpolationWeights weights = fit_weights(
      counts, heldout_ids, ctx.cfg.get_u64_list("buckets"), vocab.size(),
      parse_qt(ctx.cfg.get("qt")), ctx.cfg.get_u64("max_em_iterations"),
      ctx.cfg.get_double("em_tolerance"));

  stamp(counts.metadata, ctx);
  stamp(weights.metadata, ctx);
  counts.metadata["vocab_hash"] = std::to_string(vocab.content_hash());
  weights.metadata["vocab_hash"] = std::to_string(vocab.content_hash());
  const fs::path dir = prepare_out(out_dir, ctx);
  counts.save(dir / "counts.tsv");
  weights.save(dir / "weights.tsv");
  for (std::size_t b = 0; b < weights.bucket_lo.size(); ++b)
    std::cout << "bucket q>=" << weights.bucket_lo[b] << ": a0="
              << weights.alphas[b].a0 << " a1=" << weights.alphas[b].a1
              << " a2=" << weights.alphas[b].a2 << "\n";
}

// preset -> overrides applied where the user left the default
void apply_preset(CommandCtx& ctx) {
  const std::string preset = ctx.cfg.get("preset");
  std::vector<std::pair<std::string, std::string>> o;
  if (preset == "subword") {
    // the declared defaults already describe this setup
  } else if (preset == "word-baseline") {
    o = {{"epochs", "4,3"}, {"lr", "1e-2,1e-3"}};
  } else if (preset == "simple-lstm") {
    o = {{"num_layers", "2"},   {"hidden_dim", "200"},
         {"epochs", "10"},      {"lr", "1"},
         {"optimizer", "ntasgd"}, {"schedule", "constant"},
         {"carry_state", "false"}, {"tie_weights", "false"},
         {"weight_drop_p", "0"}, {"embed_drop_p", "0"},
         {"input_drop_p", "0"},  {"hidden_drop_p", "0"},
         {"output_drop_p", "0"}};
  } else {
    throw std::invalid_argument(
        "config key 'preset': '" + preset +
        "' is not subword/word-baseline/simple-lstm");
  }
  for (const auto& [k, v] : o)
    if (ctx.cfg.is_default(k)) ctx.cfg.set(k, v);
}

void run_train_neural(CommandCtx& ctx, const std::string& out_dir) {
  apply_preset(ctx);
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const std::vector<TokenId> train_ids =
      read_id_stream(required(ctx.cfg, "train"));
  const std::vector<TokenId> valid_ids =
      read_id_stream(required(ctx.cfg, "valid"));

  const NeuralLMConfig model = model_from_cfg(ctx.cfg, vocab.size());
  const std::vector<std::uint64_t> epochs = ctx.cfg.get_u64_list("epochs");
  const std::vector<double> lrs = ctx.cfg.get_double_list("lr");
  if (epochs.size() != lrs.size() || epochs.empty())
    throw std::invalid_argument(
        "config keys 'epochs' and 'lr' must be comma lists of equal length");

  TrainOptions opt;
  for (std::size_t i = 0; i < epochs.size(); ++i)
    opt.phases.push_back({epochs[i], lrs[i]});
  opt.phases.erase(opt.phases.begin());  // drop the default phase
  const std::string sched = ctx.cfg.get("schedule");
  if (sched == "sgdr") opt.schedule = LRSchedule::Kind::Sgdr;
  else if (sched == "constant") opt.schedule = LRSchedule::Kind::Constant;
  else
    throw std::invalid_argument("config key 'schedule': '" + sched +
                                "' is not sgdr/constant");
  const std::string optim = ctx.cfg.get("optimizer");
  if (optim == "adam") opt.optimizer = TrainOptions::Optimizer::Adam;
  else if (optim == "ntasgd") opt.optimizer = TrainOptions::Optimizer::NtAsgd;
  else
    throw std::invalid_argument("config key 'optimizer': '" + optim +
                                "' is not adam/ntasgd");
  opt.ntasgd_patience = ctx.cfg.get_u64("patience");
  opt.seed = ctx.cfg.get_u64("seed");
  opt.carry_state = ctx.cfg.get_bool("carry_state");

  const TrainResult res = train(model, train_ids, valid_ids, opt);

  std::map<std::string, std::string> meta;
  stamp(meta, ctx);
  meta["vocab_hash"] = std::to_string(vocab.content_hash());
  meta["best_epoch"] = std::to_string(res.best_epoch);
  meta["best_val_loss"] = format_double(res.best_val_loss);
  const fs::path dir = prepare_out(out_dir, ctx);
  auto final_meta = meta;
  final_meta["kind"] = "final";
  save_checkpoint(dir / "model.ckpt", res.final_params, final_meta);
  auto best_meta = meta;
  best_meta["kind"] = "best";
  save_checkpoint(dir / "model.best.ckpt", res.best_params, best_meta);
  res.log.save(dir / "train_log.csv", dir / "epoch_log.csv");
  std::cout << "best epoch " << res.best_epoch << " val_ppl "
            << std::exp(res.best_val_loss) << " -> "
            << (dir / "model.ckpt").string() << "\n";
}

void run_lr_find(CommandCtx& ctx, const std::string& out_dir) {
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const std::vector<TokenId> train_ids =
      read_id_stream(required(ctx.cfg, "train"));
  const NeuralLMConfig model = model_from_cfg(ctx.cfg, vocab.size());
  const std::uint64_t seed = ctx.cfg.get_u64("seed");

  NeuralLMParams params = init_params(model, derive_seed(seed, "init"));
  AdamState astate;
  astate.weight_decay = model.weight_decay;
  const BatchedStream batches = make_batches(train_ids, model.batch_size);
  LSTMState state = LSTMState::zeros(model, batches.lanes);
  std::size_t step = 0;

  const LrRangeResult sweep = lr_range_test(
      [&](double lr) {
        const std::size_t w = step % batches.num_windows(model.bptt_len);
        if (w == 0) state = LSTMState::zeros(model, batches.lanes);
        const DropMasks masks = sample_masks(
            model, derive_seed(seed, "masks:" + std::to_string(step)),
            batches.lanes);
        BackwardResult res = backward(batches.inputs(w, model.bptt_len),
                                      batches.targets(w, model.bptt_len),
                                      params, state, masks, SubwordVocab::kBos);
        adam_step(params, res.grads, astate, lr);
        state = std::move(res.state);
        ++step;
        return res.loss;
      },
      ctx.cfg.get_double("lr_lo"), ctx.cfg.get_double("lr_hi"),
      ctx.cfg.get_u64("steps"));

  std::string csv = "lr,loss,smoothed\n";
  for (const LrRangePoint& p : sweep.curve)
    csv += format_double(p.lr) + "," + format_double(p.loss) + "," +
           format_double(p.smoothed) + "\n";
  const fs::path dir = prepare_out(out_dir, ctx);
  write_file((dir / "lr_curve.csv").string(), csv);
  std::cout << "suggested_lr=" << format_double(sweep.suggested_lr) << "\n";
}

void run_eval(CommandCtx& ctx, const std::string& out_dir) {
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const std::vector<TokenId> test_ids =
      read_id_stream(required(ctx.cfg, "test"));
  const std::string model_path = ctx.cfg.get("model");
  const std::string counts_path = ctx.cfg.get("counts");

  EvalReport report;
  if (!model_path.empty()) {
    const Checkpoint ck = load_checkpoint(model_path);
    std::optional<std::string> expected;
    if (auto it = ck.metadata.find("vocab_hash"); it != ck.metadata.end())
      expected = it->second;
    std::string name = ctx.cfg.get("name");
    if (name.empty()) name = fs::path(model_path).stem().string();
    report =
        neural_perplexity(ck.params, vocab, test_ids, name, expected);
  } else if (!counts_path.empty()) {
    const NgramCounts counts = NgramCounts::load(counts_path);
    const InterpolationWeights weights =
        InterpolationWeights::load(required(ctx.cfg, "weights"));
    for (const auto* meta : {&counts.metadata, &weights.metadata}) {
      auto it = meta->find("vocab_hash");
      if (it != meta->end() &&
          it->second != std::to_string(vocab.content_hash()))
        throw std::runtime_error(
            "vocab/config mismatch: n-gram model was fit against a different "
            "vocabulary");
    }
    std::string name = ctx.cfg.get("name");
    if (name.empty()) name = "interpolated-" + std::to_string(counts.order()) +
                             "gram";
    report.model_name = name;
    report.granularity = vocab.mode() == TokenizerMode::Word
                             ? Granularity::BigramWord
                             : Granularity::Subword;
    report.perplexity = ngram_perplexity(counts, weights, test_ids,
                                         vocab.size(),
                                         parse_qt(ctx.cfg.get("qt")));
    report.token_count = count_predicted_positions(test_ids);
  } else {
    throw std::invalid_argument(
        "config key 'model' or 'counts'+'weights' is required");
  }
  report.metadata["seed"] = ctx.cfg.get("seed");
  report.metadata["config_hash"] = ctx.cfg.hash();

  const fs::path dir = prepare_out(out_dir, ctx);
  const std::string csv = reports_csv({report});
  write_file((dir / "eval.csv").string(), csv);
  std::cout << csv;
}

void run_generate(CommandCtx& ctx, const std::string& out_dir) {
  const SubwordVocab vocab = SubwordVocab::load(required(ctx.cfg, "vocab"));
  const Checkpoint ck = load_checkpoint(required(ctx.cfg, "model"));
  if (auto it = ck.metadata.find("vocab_hash");
      it != ck.metadata.end() &&
      it->second != std::to_string(vocab.content_hash()))
    throw std::runtime_error(
        "vocab/config mismatch: checkpoint was trained with a different "
        "vocabulary");

  GenerationConfig gen;
  gen.prompt = ctx.cfg.get("prompt");
  gen.max_tokens = ctx.cfg.get_u64("max_tokens");
  gen.temperature = ctx.cfg.get_double("temperature");
  gen.seed = ctx.cfg.get_u64("seed");
  const std::string strategy = ctx.cfg.get("strategy");
  if (strategy == "greedy") gen.strategy = GenerationConfig::Strategy::Greedy;
  else if (strategy == "temperature")
    gen.strategy = GenerationConfig::Strategy::TemperatureSample;
  else
    throw std::invalid_argument("config key 'strategy': '" + strategy +
                                "' is not greedy/temperature");
  const std::string text = generate(ck.params, vocab, gen);
  const fs::path dir = prepare_out(out_dir, ctx);
  write_file((dir / "sample.txt").string(), text + "\n");
  std::cout << text << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subword language-modeling toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string seed_flag;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed_flag, "root random seed (default: 1)");
  app.add_option("--out", out_dir, "output directory (default: .)");

  std::vector<RunConfig::KeySpec> common = {{"seed", "1", "root random seed"}};
  auto with = [&](std::vector<RunConfig::KeySpec> extra) {
    std::vector<RunConfig::KeySpec> all = common;
    all.insert(all.end(), extra.begin(), extra.end());
    return all;
  };

  CommandCtx stats_ctx("stats", with({
      {"corpus", "", "corpus path"},
      {"format", "jsonl", "corpus format: jsonl or textdir"}}));
  CommandCtx split_ctx("split", with({
      {"corpus", "", "corpus path"},
      {"format", "jsonl", "corpus format: jsonl or textdir"},
      {"fraction", "0.1", "held-out fraction"},
      {"stratify", "false", "split per category"}}));
  CommandCtx ttok_ctx("train-tokenizer", with({
      {"corpus", "", "corpus path"},
      {"format", "jsonl", "corpus format: jsonl or textdir"},
      {"mode", "subword", "subword or word"},
      {"vocab_size", "30000", "target vocabulary size (specials included)"},
      {"seed_vocab_size", "0", "candidate pool size, 0 = 8x target"},
      {"prune_fraction", "0.2", "pieces pruned per round"},
      {"max_piece_length", "16", "max piece length in characters"},
      {"min_frequency", "3", "minimum token frequency"},
      {"max_em_iterations", "10", "EM iterations per round"},
      {"em_tolerance", "1e-6", "relative log-likelihood tolerance"}}));
  CommandCtx tok_ctx("tokenize", with({
      {"input", "", "text or corpus file"},
      {"format", "text", "text, jsonl or textdir"},
      {"vocab", "", "vocabulary file"},
      {"markers", "true", "wrap each document in <s>...</s>"}}));
  CommandCtx tngram_ctx("train-ngram", with({
      {"train", "", "training id stream"},
      {"heldout", "", "held-out id stream for weight fitting"},
      {"vocab", "", "vocabulary file"},
      {"order", "2", "n-gram order (1..3)"},
      {"buckets", "0,1,10,100", "context-frequency bucket lower bounds"},
      {"qt", "prev-word", "bucket frequency: prev-word or prev-pair"},
      {"max_em_iterations", "200", "EM iteration cap"},
      {"em_tolerance", "1e-12", "relative log-likelihood tolerance"}}));
  CommandCtx tneural_ctx("train-neural", with([&] {
    std::vector<RunConfig::KeySpec> keys = {
        {"train", "", "training id stream"},
        {"valid", "", "validation id stream"},
        {"vocab", "", "vocabulary file"},
        {"preset", "subword", "subword, word-baseline or simple-lstm"},
        {"epochs", "20", "epochs per phase (comma list)"},
        {"lr", "1e-3", "max learning rate per phase (comma list)"},
        {"schedule", "sgdr", "sgdr or constant"},
        {"optimizer", "adam", "adam or ntasgd"},
        {"patience", "5", "NT-ASGD patience in validation cycles"},
        {"carry_state", "true", "carry LSTM state across windows"}};
    const auto mk = model_keys();
    keys.insert(keys.end(), mk.begin(), mk.end());
    return keys;
  }()));
  CommandCtx lrfind_ctx("lr-find", with([&] {
    std::vector<RunConfig::KeySpec> keys = {
        {"train", "", "training id stream"},
        {"vocab", "", "vocabulary file"},
        {"lr_lo", "1e-7", "sweep start"},
        {"lr_hi", "10", "sweep end"},
        {"steps", "100", "sweep batches"}};
    const auto mk = model_keys();
    keys.insert(keys.end(), mk.begin(), mk.end());
    return keys;
  }()));
  CommandCtx eval_ctx("eval", with({
      {"model", "", "neural checkpoint"},
      {"counts", "", "n-gram counts file"},
      {"weights", "", "interpolation weights file"},
      {"qt", "prev-word", "bucket frequency: prev-word or prev-pair"},
      {"vocab", "", "vocabulary file"},
      {"test", "", "test id stream"},
      {"name", "", "model label (default: derived from the file)"}}));
  CommandCtx gen_ctx("generate", with({
      {"model", "", "neural checkpoint"},
      {"vocab", "", "vocabulary file"},
      {"prompt", "", "prompt text"},
      {"max_tokens", "100", "generation budget"},
      {"strategy", "temperature", "temperature or greedy"},
      {"temperature", "0.8", "softmax temperature"}}));

  struct Cmd {
    CommandCtx* ctx;
    const char* help;
    void (*fn)(CommandCtx&, const std::string&);
  };
  const std::vector<Cmd> cmds = {
      {&stats_ctx, "dataset statistics (samples/words/unique per category)",
       run_stats},
      {&split_ctx, "deterministic train/held-out split", run_split},
      {&ttok_ctx, "train the subword (or word) vocabulary", run_train_tokenizer},
      {&tok_ctx, "encode text into a binary id stream", run_tokenize},
      {&tngram_ctx, "count n-grams and fit interpolation weights",
       run_train_ngram},
      {&tneural_ctx, "train the LSTM language model", run_train_neural},
      {&lrfind_ctx, "learning-rate range test", run_lr_find},
      {&eval_ctx, "perplexity of a trained model on test ids", run_eval},
      {&gen_ctx, "continue a prompt with a trained model", run_generate},
  };

  CommandCtx* selected = nullptr;
  void (*selected_fn)(CommandCtx&, const std::string&) = nullptr;
  for (const Cmd& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.ctx->command, c.help);
    sub->fallthrough();
    bind_keys(sub, *c.ctx);
    // positional corpus/input path where one exists
    sub->callback([&selected, &selected_fn, &c] {
      selected = c.ctx;
      selected_fn = c.fn;
    });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (!seed_flag.empty()) selected->pending.emplace_back("seed", seed_flag);
    resolve(*selected, config_path);
    selected_fn(*selected, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
