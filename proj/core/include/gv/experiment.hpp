#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gv/bpe.hpp"
#include "gv/lm_train.hpp"
#include "gv/multiclass.hpp"
#include "gv/perf.hpp"

// Glue shared by the command-line tool and the acceptance runner.
namespace gv {

// Whole file as bytes. Missing or unreadable files are an InputError naming
// the path.
std::string read_text_file(const std::filesystem::path& path);

std::vector<Index> encode_corpus(const bpe::Tokenizer& tokenizer, std::string_view text);

struct IdSplit {
  std::vector<Index> train;
  std::vector<Index> val;
};

// The trailing val_fraction of the ids (rounded down) becomes validation.
IdSplit split_tail(std::span<const Index> ids, double val_fraction);

// Text format: `ids-v1 <count> <vocab>` then whitespace-separated ids.
void save_ids(const std::filesystem::path& path, std::span<const Index> ids, std::size_t vocab);
struct IdFile {
  std::vector<Index> ids;
  std::size_t vocab = 0;
};
IdFile load_ids(const std::filesystem::path& path);

bpe::Tokenizer load_tokenizer(const std::filesystem::path& path);

// CSV schemas. Headers are part of the stable interface.
inline constexpr std::string_view kLossCsvHeader = "step,loss,loss_group,loss_token";
inline constexpr std::string_view kEvalCsvHeader = "step,val_nll";
inline constexpr std::string_view kAblationCsvHeader = "group_size,val_loss,peak_elements";
inline constexpr std::string_view kThroughputCsvHeader = "head,d,vocab,tokens_per_second";
inline constexpr std::string_view kClassifyCsvHeader =
    "head,epoch,steps,train_loss,val_accuracy,group_accuracy";

// Dense runs leave loss_group and loss_token empty.
void write_loss_csv(std::ostream& out, std::span<const TraceRow> trace);
void write_eval_csv(std::ostream& out, std::span<const EvalRow> evals);

struct AblationRow {
  std::size_t group_size = 0;
  std::size_t groups = 0;
  double val_loss = 0;
  std::int64_t peak_elements = 0;
};

struct AblationOptions {
  std::vector<std::size_t> group_sizes{8, 16, 32, 64, 128};
  LmTrainOptions train{};
  std::size_t eval_windows = 0;  // 0: whole validation split
  std::uint64_t model_seed = 0;
};

// One grouped model per group size, identical body seed and batches. The
// peak is the element meter over the head's loss and backward at the
// training batch shape.
template <class T>
std::vector<AblationRow> run_ablation(const LmConfig& base, std::span<const Index> train_ids,
                                      std::span<const Index> val_ids,
                                      const AblationOptions& options,
                                      const std::function<void(const AblationRow&)>& on_row = {});

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);
void write_throughput_csv(std::ostream& out, std::span<const perf::ThroughputResult> rows);
void write_classify_csv(std::ostream& out, HeadKind kind, std::span<const mc::EpochRow> rows);

}  // namespace gv
