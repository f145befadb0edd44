// gvocab: command-line front end for tokenizer training, LM training and
// evaluation, generation, and the memory/throughput/ablation/classification
// experiments.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gv/bpe.hpp"
#include "gv/checkpoint.hpp"
#include "gv/error.hpp"
#include "gv/experiment.hpp"
#include "gv/lm_train.hpp"
#include "gv/multiclass.hpp"
#include "gv/perf.hpp"
#include "gv/run_config.hpp"

namespace fs = std::filesystem;
using namespace gv;

namespace {

constexpr const char* kVersion = "gvocab 0.1.0";

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3 };

// Settings shared by every subcommand.
struct Common {
  std::string out;
  std::string config;
};

struct DataFlags {
  std::string corpus;
  std::string tokenizer;
  std::string ids;
  std::size_t vocab = 1024;
  double val_fraction = 0.1;
  std::string id_order = "bpe";
};

struct ModelFlags {
  std::size_t d = 64;
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t seq = 256;
  std::string head = "grouped";
  std::string group_size = "auto";
  std::string dtype = "fp32";
};

struct TrainFlags {
  std::size_t batch = 16;
  std::size_t steps = 2000;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;
  std::size_t eval_windows = 0;
};

std::size_t parse_group_size(const std::string& text) {
  if (text == "auto") return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size() && v > 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("group-size must be 'auto' or a positive integer, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not a positive integer");
    }
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

fs::path output_dir(const Common& common, const std::string& command) {
  fs::path dir;
  if (!common.out.empty()) {
    dir = common.out;
  } else {
    const char* root = std::getenv("GV_OUT");
    dir = fs::path(root && *root ? root : "runs") / command;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

// Every option of the subcommand with its effective value, plus resolved
// extras, written as `config.txt` next to the outputs.
void write_resolved(const CLI::App& app, const fs::path& dir, std::vector<KeyValue> extras) {
  std::vector<KeyValue> kv{{"command", app.get_name()}, {"version", kVersion}};
  for (const auto* opt : app.get_options()) {
    const auto names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "config" || names[0] == "out") continue;
    std::string value = opt->get_default_str();
    if (opt->count() > 0 && !opt->results().empty()) value = opt->results().back();
    kv.push_back({names[0], value});
  }
  for (auto& e : extras) kv.push_back(std::move(e));
  write_key_value_file(dir / "config.txt", kv);
}

struct Data {
  std::vector<Index> ids;
  std::size_t vocab = 0;
  std::string id_order;
  std::optional<bpe::Tokenizer> tokenizer;
};

// --ids, or --corpus with --tokenizer, or --corpus alone (a tokenizer with
// --vocab ids is trained and saved into the run directory).
Data load_data(const DataFlags& flags, const fs::path& dir) {
  Data data;
  if (!flags.ids.empty()) {
    if (!flags.corpus.empty()) throw ConfigError("give either --ids or --corpus, not both");
    auto file = load_ids(flags.ids);
    data.ids = std::move(file.ids);
    data.vocab = file.vocab;
    if (flags.id_order != "bpe" && flags.id_order != "raw") {
      throw ConfigError("id-order must be bpe or raw");
    }
    data.id_order = flags.id_order;
    return data;
  }
  if (flags.corpus.empty()) throw ConfigError("one of --ids or --corpus is required");
  const auto text = read_text_file(flags.corpus);
  if (!flags.tokenizer.empty()) {
    data.tokenizer.emplace(load_tokenizer(flags.tokenizer));
  } else {
    if (flags.vocab < 2) throw ConfigError("vocab must be at least 2");
    bpe::TrainOptions options;
    options.target_vocab = flags.vocab - 1;
    data.tokenizer.emplace(bpe::train(text, options));
    auto out = open_out(dir / "tokenizer.txt");
    data.tokenizer->table().save(out);
  }
  data.ids = encode_corpus(*data.tokenizer, text);
  data.vocab = data.tokenizer->vocab_size();
  data.id_order = "bpe";
  return data;
}

LmConfig make_config(const ModelFlags& m, std::size_t vocab) {
  LmConfig c;
  c.d = m.d;
  c.layers = m.layers;
  c.heads = m.heads;
  c.seq_len = m.seq;
  c.vocab = vocab;
  c.head = parse_head_kind(m.head);
  c.group_size = parse_group_size(m.group_size);
  c.validate();
  return c;
}

LmTrainOptions make_train_options(const TrainFlags& t) {
  LmTrainOptions o;
  o.steps = t.steps;
  o.batch = t.batch;
  o.seed = t.seed;
  o.adam.lr = t.lr;
  o.adam.beta1 = t.beta1;
  o.adam.beta2 = t.beta2;
  o.adam.clip_norm = t.clip;
  o.eval_every = t.eval_every;
  o.eval_windows = t.eval_windows;
  return o;
}

std::vector<KeyValue> partition_extras(const LmConfig& c) {
  if (c.head != HeadKind::grouped) return {{"resolved_group_size", "0"}, {"resolved_groups", "0"}};
  const auto p = c.partition();
  return {{"resolved_group_size", std::to_string(p.group_size())},
          {"resolved_groups", std::to_string(p.num_groups())}};
}

void add_data_flags(CLI::App& app, DataFlags& f) {
  app.add_option("--corpus", f.corpus, "Plain-text corpus");
  app.add_option("--tokenizer", f.tokenizer, "Merge table from tokenize-train");
  app.add_option("--ids", f.ids, "Pre-tokenised ids-v1 file");
  app.add_option("--vocab", f.vocab, "Vocabulary size when training a tokenizer on the fly");
  app.add_option("--val-fraction", f.val_fraction, "Trailing share of ids held out");
  app.add_option("--id-order", f.id_order, "Id order of an --ids file: bpe or raw");
}

void add_model_flags(CLI::App& app, ModelFlags& m) {
  app.add_option("--d", m.d, "Hidden size");
  app.add_option("--layers", m.layers, "Transformer blocks");
  app.add_option("--heads", m.heads, "Attention heads");
  app.add_option("--seq", m.seq, "Sequence length");
  app.add_option("--head", m.head, "Output head: dense or grouped");
  app.add_option("--group-size", m.group_size, "Tokens per group or 'auto'");
  app.add_option("--dtype", m.dtype, "fp32 or fp64");
}

void add_train_flags(CLI::App& app, TrainFlags& t) {
  app.add_option("--batch", t.batch, "Sequences per step");
  app.add_option("--steps", t.steps, "Optimiser steps");
  app.add_option("--lr", t.lr, "Adam learning rate");
  app.add_option("--beta1", t.beta1);
  app.add_option("--beta2", t.beta2);
  app.add_option("--clip", t.clip, "Global gradient norm clip (<= 0 disables)");
  app.add_option("--seed", t.seed, "Seed for weights and batches");
  app.add_option("--eval-every", t.eval_every, "Validation interval in steps (0: end only)");
  app.add_option("--eval-windows", t.eval_windows, "Max validation windows (0: all)");
}

// ---- subcommands -----------------------------------------------------------

int cmd_tokenize_train(const CLI::App& app, const Common& common, const DataFlags& flags,
                       std::size_t min_pair_count) {
  const auto dir = output_dir(common, "tokenize-train");
  if (flags.corpus.empty()) throw ConfigError("--corpus is required");
  if (flags.vocab < 2) throw ConfigError("vocab must be at least 2");
  const auto text = read_text_file(flags.corpus);
  bpe::TrainOptions options;
  options.target_vocab = flags.vocab - 1;
  options.min_pair_count = min_pair_count;
  const bpe::Tokenizer tokenizer(bpe::train(text, options));
  {
    auto out = open_out(dir / "tokenizer.txt");
    tokenizer.table().save(out);
  }
  const auto ids = encode_corpus(tokenizer, text);
  save_ids(dir / "ids.txt", ids, tokenizer.vocab_size());
  write_resolved(app, dir,
                 {{"resolved_vocab", std::to_string(tokenizer.vocab_size())},
                  {"alphabet", std::to_string(tokenizer.table().alphabet_size())},
                  {"merges", std::to_string(tokenizer.table().num_merges())},
                  {"tokens", std::to_string(ids.size())}});
  std::cout << "vocab " << tokenizer.vocab_size() << " (" << tokenizer.table().alphabet_size()
            << " bytes + " << tokenizer.table().num_merges() << " merges + unk), " << ids.size()
            << " tokens -> " << dir.string() << '\n';
  return kOk;
}

int cmd_train(const CLI::App& app, const Common& common, const DataFlags& df,
              const ModelFlags& mf, const TrainFlags& tf) {
  const auto dir = output_dir(common, "train");
  const auto data = load_data(df, dir);
  const auto split = split_tail(data.ids, df.val_fraction);
  const auto config = make_config(mf, data.vocab);
  const auto options = make_train_options(tf);
  auto extras = partition_extras(config);
  extras.push_back({"resolved_vocab", std::to_string(data.vocab)});
  extras.push_back({"id_order", data.id_order});
  extras.push_back({"train_tokens", std::to_string(split.train.size())});
  extras.push_back({"val_tokens", std::to_string(split.val.size())});
  write_resolved(app, dir, extras);

  return dispatch_precision(parse_precision(mf.dtype), [&]<class T>() {
    TransformerLM<T> model(config, tf.seed);
    std::cout << "params " << model.parameter_count() << " (head "
              << model.head().parameter_count() << ")\n";
    const auto result = train_lm(model, split.train, split.val, options, [&](const TraceRow& r) {
      if (r.step % 100 == 0 || r.step + 1 == options.steps) {
        std::cout << "step " << r.step << " loss " << r.loss << '\n';
      }
    });
    {
      auto out = open_out(dir / "loss.csv");
      write_loss_csv(out, result.trace);
    }
    {
      auto out = open_out(dir / "eval.csv");
      write_eval_csv(out, result.evals);
    }
    CheckpointMeta meta;
    meta.step = options.steps;
    meta.seed = tf.seed;
    meta.adam = options.adam;
    meta.id_order = data.id_order;
    save_checkpoint(dir / "checkpoint", model, meta);

    std::vector<KeyValue> summary{{"steps", std::to_string(options.steps)},
                                  {"final_loss", format_double(result.trace.back().loss)}};
    if (!result.evals.empty()) {
      summary.push_back({"val_nll", format_double(result.evals.back().val_nll)});
      summary.push_back(
          {"unigram_val_xent",
           format_double(unigram_cross_entropy(split.train, split.val, data.vocab))});
      std::cout << "val nll " << result.evals.back().val_nll << '\n';
    }
    summary.push_back({"unigram_entropy", format_double(unigram_entropy(split.train))});
    write_key_value_file(dir / "summary.txt", summary);
    return kOk;
  });
}

int cmd_eval(const CLI::App& app, const Common& common, const DataFlags& df,
             const std::string& checkpoint, const std::string& split_name, std::size_t batch,
             std::size_t windows) {
  const auto dir = output_dir(common, "eval");
  const auto manifest = read_checkpoint_manifest(checkpoint);
  const auto config = config_from_manifest(manifest);
  const auto data = load_data(df, dir);
  if (data.vocab != config.vocab) {
    throw ConfigError("data vocabulary " + std::to_string(data.vocab) +
                      " does not match checkpoint vocabulary " + std::to_string(config.vocab));
  }
  if (split_name != "val" && split_name != "all") throw ConfigError("split must be val or all");
  const auto split = split_tail(data.ids, split_name == "val" ? df.val_fraction : 0.0);
  const auto& ids = split_name == "val" ? split.val : split.train;
  write_resolved(app, dir, {{"eval_tokens", std::to_string(ids.size())}});
  const auto precision = parse_precision(require_value(manifest, "dtype"));
  const double nll = dispatch_precision(precision, [&]<class T>() {
    const auto loaded = load_checkpoint<T>(checkpoint);
    return evaluate_lm(*loaded.model, ids, batch, windows);
  });
  write_key_value_file(dir / "eval.txt", {{"val_nll", format_double(nll)},
                                          {"head", to_string(config.head)},
                                          {"tokens", std::to_string(ids.size())}});
  std::cout << "nll " << nll << " nats/token\n";
  return kOk;
}

int cmd_generate(const CLI::App& app, const Common& common, const std::string& checkpoint,
                 const std::string& tokenizer_path, const std::string& prompt,
                 const GenerateOptions& options) {
  const auto dir = output_dir(common, "generate");
  const auto manifest = read_checkpoint_manifest(checkpoint);
  const auto config = config_from_manifest(manifest);
  if (tokenizer_path.empty()) throw ConfigError("--tokenizer is required");
  const auto tokenizer = load_tokenizer(tokenizer_path);
  if (tokenizer.vocab_size() != config.vocab) {
    throw ConfigError("tokenizer vocabulary does not match checkpoint vocabulary");
  }
  if (options.top_k < 1) throw ConfigError("top-k must be at least 1");
  auto prompt_ids = encode_corpus(tokenizer, prompt);
  if (prompt_ids.empty()) throw ConfigError("prompt is empty");
  write_resolved(app, dir, {});
  const auto precision = parse_precision(require_value(manifest, "dtype"));
  const auto out_ids = dispatch_precision(precision, [&]<class T>() {
    const auto loaded = load_checkpoint<T>(checkpoint);
    return generate(*loaded.model, prompt_ids, options);
  });
  std::vector<bpe::TokenId> tokens(out_ids.begin(), out_ids.end());
  const auto text = tokenizer.decode(tokens);
  open_out(dir / "generation.txt") << prompt << text << '\n';
  std::cout << prompt << text << '\n';
  return kOk;
}

int cmd_bench_mem(const CLI::App& app, const Common& common, std::size_t batch, std::size_t seq,
                  std::size_t vocab, std::size_t d, const std::string& group_size,
                  const std::string& dtype, std::uint64_t seed) {
  const auto dir = output_dir(common, "bench-mem");
  const auto s = parse_group_size(group_size);
  const auto precision = parse_precision(dtype);
  auto report = perf::analytic_report(batch, seq, vocab, d, s, precision);
  dispatch_precision(precision, [&]<class T>() {
    report.measured_peak_dense =
        perf::measure_head_peak<T>(HeadKind::dense, batch, seq, vocab, d, 0, seed);
    report.measured_peak_grouped =
        perf::measure_head_peak<T>(HeadKind::grouped, batch, seq, vocab, d, s, seed);
    return 0;
  });
  write_resolved(app, dir,
                 {{"resolved_group_size", std::to_string(report.group_size)},
                  {"resolved_groups", std::to_string(report.groups)}});
  const std::vector<perf::CostReport> reports{report};
  {
    auto out = open_out(dir / "cost.csv");
    perf::write_cost_csv(out, reports);
  }
  perf::write_cost_table(std::cout, report);
  return kOk;
}

int cmd_bench_throughput(const CLI::App& app, const Common& common, const std::string& d_list,
                         const ModelFlags& mf, std::size_t vocab,
                         const perf::ThroughputOptions& options) {
  const auto dir = output_dir(common, "bench-throughput");
  const auto ds = parse_size_list(d_list, "d-list");
  write_resolved(app, dir, {});
  std::vector<perf::ThroughputResult> rows;
  const auto precision = parse_precision(mf.dtype);
  for (const auto d : ds) {
    double dense_tps = 0;
    for (const auto kind : {HeadKind::dense, HeadKind::grouped}) {
      ModelFlags m = mf;
      m.d = d;
      m.head = to_string(kind);
      const auto config = make_config(m, vocab);
      auto r = dispatch_precision(precision, [&]<class T>() {
        return perf::throughput_bench<T>(config, options);
      });
      if (kind == HeadKind::dense) dense_tps = r.tokens_per_second;
      std::cout << "d=" << d << ' ' << to_string(kind) << ' ' << r.tokens_per_second
                << " tokens/s";
      if (kind == HeadKind::grouped) std::cout << " (x" << r.tokens_per_second / dense_tps << ")";
      std::cout << '\n';
      rows.push_back(std::move(r));
    }
  }
  auto out = open_out(dir / "throughput.csv");
  write_throughput_csv(out, rows);
  return kOk;
}

int cmd_ablate(const CLI::App& app, const Common& common, const DataFlags& df,
               const ModelFlags& mf, const TrainFlags& tf, const std::string& sizes) {
  const auto dir = output_dir(common, "ablate");
  const auto data = load_data(df, dir);
  const auto split = split_tail(data.ids, df.val_fraction);
  ModelFlags grouped = mf;
  grouped.head = "grouped";
  const auto config = make_config(grouped, data.vocab);
  AblationOptions options;
  options.group_sizes = parse_size_list(sizes, "group-sizes");
  options.train = make_train_options(tf);
  options.eval_windows = tf.eval_windows;
  options.model_seed = tf.seed;
  write_resolved(app, dir,
                 {{"resolved_vocab", std::to_string(data.vocab)}, {"id_order", data.id_order}});
  const auto rows = dispatch_precision(parse_precision(mf.dtype), [&]<class T>() {
    return run_ablation<T>(config, split.train, split.val, options, [](const AblationRow& r) {
      std::cout << "group_size " << r.group_size << " groups " << r.groups << " val_loss "
                << r.val_loss << " peak " << r.peak_elements << '\n';
    });
  });
  auto out = open_out(dir / "ablation.csv");
  write_ablation_csv(out, rows);
  return kOk;
}

int cmd_classify(const CLI::App& app, const Common& common, const mc::DatasetOptions& dopt,
                 const std::string& dataset_path, const std::string& heads,
                 const mc::ClassifierOptions& copt, const std::string& dtype) {
  const auto dir = output_dir(common, "classify");
  if (dopt.sigma < 0) throw InputError("sigma must be non-negative");
  std::vector<HeadKind> kinds;
  if (heads == "both") {
    kinds = {HeadKind::dense, HeadKind::grouped};
  } else {
    kinds = {parse_head_kind(heads)};
  }
  const auto data =
      dataset_path.empty() ? mc::generate_dataset(dopt) : mc::load_dataset(dataset_path);
  const auto split = mc::split_last_per_label(data);
  write_resolved(app, dir, {{"samples", std::to_string(data.size())}});
  auto out = open_out(dir / "classify.csv");
  out << kClassifyCsvHeader << '\n';
  for (const auto kind : kinds) {
    auto options = copt;
    options.head = kind;
    const auto result = dispatch_precision(parse_precision(dtype), [&]<class T>() {
      return mc::train_classifier<T>(split.train, split.val, options, [&](const mc::EpochRow& r) {
        std::cout << to_string(kind) << " epoch " << r.epoch << " loss " << r.train_loss
                  << " acc " << r.val_accuracy;
        if (r.group_accuracy >= 0) std::cout << " group_acc " << r.group_accuracy;
        std::cout << '\n';
      });
    });
    write_classify_csv(out, kind, result.epochs);
    out.flush();
    std::cout << to_string(kind) << " head parameters " << result.head_parameters << '\n';
  }
  return kOk;
}

// `--config FILE` entries become `--key=value` arguments placed before the
// user's own, so flags given on the command line take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> injected;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
    if (!path.empty()) {
      for (const auto& kv : read_key_value_file(path)) {
        injected.push_back("--" + kv.key + "=" + kv.value);
      }
    }
  }
  if (args.empty()) return args;
  out.push_back(args[0]);  // subcommand
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped vocabulary head experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);

  Common common;
  auto common_flags = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "Output directory (default $GV_OUT/<command>)");
    sub->add_option("--config", common.config, "key = value file; flags override it");
  };

  DataFlags data;
  ModelFlags model;
  TrainFlags train;

  auto* tok = app.add_subcommand("tokenize-train", "Learn BPE merges and encode the corpus");
  common_flags(tok);
  std::size_t min_pair_count = 2;
  tok->add_option("--corpus", data.corpus, "Plain-text corpus")->required();
  tok->add_option("--vocab", data.vocab, "Final vocabulary size including the unknown id");
  tok->add_option("--min-pair-count", min_pair_count, "Least frequency a merged pair needs");

  auto* trn = app.add_subcommand("train", "Train a language model");
  common_flags(trn);
  add_data_flags(*trn, data);
  add_model_flags(*trn, model);
  add_train_flags(*trn, train);

  auto* evl = app.add_subcommand("eval", "Validation NLL of a checkpoint");
  common_flags(evl);
  add_data_flags(*evl, data);
  std::string checkpoint, split_name = "val";
  std::size_t eval_batch = 8, eval_windows = 0;
  evl->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  evl->add_option("--split", split_name, "val or all");
  evl->add_option("--batch", eval_batch, "Windows per forward pass");
  evl->add_option("--windows", eval_windows, "Max windows (0: all)");

  auto* gen = app.add_subcommand("generate", "Sample a continuation");
  common_flags(gen);
  std::string tokenizer_path, prompt;
  GenerateOptions gen_options;
  gen->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  gen->add_option("--tokenizer", tokenizer_path, "Merge table")->required();
  gen->add_option("--prompt", prompt, "Prompt text")->required();
  gen->add_option("--max-new", gen_options.max_new, "Tokens to generate");
  gen->add_option("--top-k", gen_options.top_k, "Sample among the k most likely ids");
  gen->add_option("--temperature", gen_options.temperature, "<= 0 is greedy");
  gen->add_option("--seed", gen_options.seed, "Sampling seed");

  auto* mem = app.add_subcommand("bench-mem", "Analytic and measured head memory");
  common_flags(mem);
  std::size_t mem_batch = 8, mem_seq = 64, mem_vocab = 4096, mem_d = 64;
  std::uint64_t mem_seed = 0;
  mem->add_option("--batch", mem_batch);
  mem->add_option("--seq", mem_seq);
  mem->add_option("--vocab", mem_vocab);
  mem->add_option("--d", mem_d);
  mem->add_option("--group-size", model.group_size, "Tokens per group or 'auto'");
  mem->add_option("--dtype", model.dtype, "fp32 or fp64");
  mem->add_option("--seed", mem_seed);

  auto* thr = app.add_subcommand("bench-throughput", "Training tokens/s, dense vs grouped");
  common_flags(thr);
  std::string d_list = "128,256,512";
  std::size_t thr_vocab = 32768;
  perf::ThroughputOptions thr_options;
  ModelFlags thr_model;
  thr_model.seq = 64;
  thr->add_option("--d-list", d_list, "Comma-separated hidden sizes");
  thr->add_option("--vocab", thr_vocab);
  thr->add_option("--layers", thr_model.layers);
  thr->add_option("--heads", thr_model.heads);
  thr->add_option("--seq", thr_model.seq);
  thr->add_option("--group-size", thr_model.group_size, "Tokens per group or 'auto'");
  thr->add_option("--dtype", thr_model.dtype, "fp32 or fp64");
  thr->add_option("--batch", thr_options.batch);
  thr->add_option("--trials", thr_options.trials);
  thr->add_option("--warmup", thr_options.warmup);
  thr->add_option("--seed", thr_options.seed);

  auto* abl = app.add_subcommand("ablate", "Group-size sweep");
  common_flags(abl);
  add_data_flags(*abl, data);
  ModelFlags abl_model;
  TrainFlags abl_train;
  abl_train.steps = 500;
  add_model_flags(*abl, abl_model);
  add_train_flags(*abl, abl_train);
  std::string group_sizes = "8,16,32,64,128";
  abl->add_option("--group-sizes", group_sizes, "Comma-separated group sizes");

  auto* cls = app.add_subcommand("classify", "Synthetic multiclass experiment");
  common_flags(cls);
  mc::DatasetOptions dopt;
  mc::ClassifierOptions copt;
  std::string dataset_path, cls_heads = "both", cls_dtype = "fp32";
  cls->add_option("--labels", dopt.n_labels, "Leading labels used");
  cls->add_option("--per-label", dopt.per_label, "Samples per label");
  cls->add_option("--sigma", dopt.sigma, "Feature noise");
  cls->add_option("--data-seed", dopt.seed, "Dataset seed");
  cls->add_option("--dataset", dataset_path, "Load an smc-v1 dataset instead of generating");
  cls->add_option("--head", cls_heads, "dense, grouped or both");
  cls->add_option("--hidden", copt.hidden, "Encoder width");
  cls->add_option("--epochs", copt.epochs);
  cls->add_option("--batch", copt.batch, "Micro-batch size");
  cls->add_option("--accumulate", copt.accumulate, "Micro-batches per optimiser step");
  cls->add_option("--lr", copt.lr);
  cls->add_option("--seed", copt.seed, "Model and shuffling seed");
  cls->add_option("--dtype", cls_dtype, "fp32 or fp64");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }

  try {
    if (*tok) return cmd_tokenize_train(*tok, common, data, min_pair_count);
    if (*trn) return cmd_train(*trn, common, data, model, train);
    if (*evl) return cmd_eval(*evl, common, data, checkpoint, split_name, eval_batch, eval_windows);
    if (*gen) return cmd_generate(*gen, common, checkpoint, tokenizer_path, prompt, gen_options);
    if (*mem) {
      return cmd_bench_mem(*mem, common, mem_batch, mem_seq, mem_vocab, mem_d, model.group_size,
                           model.dtype, mem_seed);
    }
    if (*thr) return cmd_bench_throughput(*thr, common, d_list, thr_model, thr_vocab, thr_options);
    if (*abl) return cmd_ablate(*abl, common, data, abl_model, abl_train, group_sizes);
    if (*cls) return cmd_classify(*cls, common, dopt, dataset_path, cls_heads, copt, cls_dtype);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kConfig;
  } catch (const IndexError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
