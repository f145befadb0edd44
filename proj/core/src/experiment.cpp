#include "gv/experiment.hpp"

#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "gv/error.hpp"
#include "gv/run_config.hpp"

namespace gv {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<Index> encode_corpus(const bpe::Tokenizer& tokenizer, std::string_view text) {
  const auto ids = tokenizer.encode(text);
  return std::vector<Index>(ids.begin(), ids.end());
}

IdSplit split_tail(std::span<const Index> ids, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val fraction must lie in [0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(static_cast<double>(ids.size()) * val_fraction);
  const std::size_t cut = ids.size() - n_val;
  return {std::vector<Index>(ids.begin(), ids.begin() + cut),
          std::vector<Index>(ids.begin() + cut, ids.end())};
}

void save_ids(const std::filesystem::path& path, std::span<const Index> ids, std::size_t vocab) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "ids-v1 " << ids.size() << ' ' << vocab << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ((i + 1) % 32 == 0 || i + 1 == ids.size() ? '\n' : ' ');
  }
  if (!out) throw InputError("failed writing " + path.string());
}

IdFile load_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string magic;
  std::size_t count = 0;
  IdFile file;
  if (!(in >> magic >> count >> file.vocab) || magic != "ids-v1") {
    throw InputError(path.string() + ": not an ids-v1 file");
  }
  file.ids.resize(count);
  for (auto& id : file.ids) {
    if (!(in >> id)) throw InputError(path.string() + ": truncated id list");
    if (id >= file.vocab) {
      throw InputError(path.string() + ": id " + std::to_string(id) + " outside vocab " +
                       std::to_string(file.vocab));
    }
  }
  return file;
}

bpe::Tokenizer load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return bpe::Tokenizer(bpe::MergeTable::load(in));
}

void write_loss_csv(std::ostream& out, std::span<const TraceRow> trace) {
  out << kLossCsvHeader << '\n';
  for (const auto& row : trace) {
    out << row.step << ',' << format_double(row.loss) << ',';
    if (row.loss_group) out << format_double(*row.loss_group);
    out << ',';
    if (row.loss_token) out << format_double(*row.loss_token);
    out << '\n';
  }
}

void write_eval_csv(std::ostream& out, std::span<const EvalRow> evals) {
  out << kEvalCsvHeader << '\n';
  for (const auto& row : evals) out << row.step << ',' << format_double(row.val_nll) << '\n';
}

template <class T>
std::vector<AblationRow> run_ablation(const LmConfig& base, std::span<const Index> train_ids,
                                      std::span<const Index> val_ids,
                                      const AblationOptions& options,
                                      const std::function<void(const AblationRow&)>& on_row) {
  if (val_ids.size() <= base.seq_len) throw InputError("ablation needs a validation split");
  std::vector<AblationRow> rows;
  for (const auto s : options.group_sizes) {
    LmConfig config = base;
    config.head = HeadKind::grouped;
    config.group_size = s;
    config.validate();
    TransformerLM<T> model(config, options.model_seed);
    train_lm(model, train_ids, {}, options.train);
    AblationRow row;
    row.group_size = s;
    row.groups = config.partition().num_groups();
    row.val_loss = evaluate_lm(model, val_ids, options.train.batch, options.eval_windows);
    row.peak_elements = perf::measure_head_peak<T>(HeadKind::grouped, options.train.batch,
                                                   config.seq_len, config.vocab, config.d, s,
                                                   options.model_seed);
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << kAblationCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.group_size << ',' << format_double(r.val_loss) << ',' << r.peak_elements << '\n';
  }
}

void write_throughput_csv(std::ostream& out, std::span<const perf::ThroughputResult> rows) {
  out << kThroughputCsvHeader << '\n';
  for (const auto& r : rows) {
    out << to_string(r.kind) << ',' << r.d << ',' << r.vocab << ','
        << format_double(r.tokens_per_second) << '\n';
  }
}

void write_classify_csv(std::ostream& out, HeadKind kind, std::span<const mc::EpochRow> rows) {
  for (const auto& r : rows) {
    out << to_string(kind) << ',' << r.epoch << ',' << r.steps << ',' << format_double(r.train_loss)
        << ',' << format_double(r.val_accuracy) << ',';
    if (r.group_accuracy >= 0) out << format_double(r.group_accuracy);
    out << '\n';
  }
}

template std::vector<AblationRow> run_ablation<float>(const LmConfig&, std::span<const Index>,
                                                      std::span<const Index>,
                                                      const AblationOptions&,
                                                      const std::function<void(const AblationRow&)>&);
template std::vector<AblationRow> run_ablation<double>(const LmConfig&, std::span<const Index>,
                                                       std::span<const Index>,
                                                       const AblationOptions&,
                                                       const std::function<void(const AblationRow&)>&);

}  // namespace gv
