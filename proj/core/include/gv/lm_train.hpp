#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gv/error.hpp"
#include "gv/optim.hpp"
#include "gv/transformer.hpp"

namespace gv {

struct LmTrainOptions {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  AdamOptions adam{};
  std::uint64_t seed = 0;
  // Validation NLL every this many steps (0: only at the end, if val ids
  // were given). Each evaluation uses at most eval_windows windows.
  std::size_t eval_every = 0;
  std::size_t eval_windows = 0;  // 0: all
};

struct TraceRow {
  std::size_t step;
  double loss;
  std::optional<double> loss_group;
  std::optional<double> loss_token;
};

struct EvalRow {
  std::size_t step;
  double val_nll;
};

struct LmTrainResult {
  std::vector<TraceRow> trace;
  std::vector<EvalRow> evals;
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t step, const std::string& detail);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Trains on random windows of seq_len+1 ids drawn with a seeded generator.
// trace[k] is the loss of the batch seen at step k, before its update, so
// trace[0] is the loss at initialisation.
template <class T>
LmTrainResult train_lm(TransformerLM<T>& model, std::span<const Index> train_ids,
                       std::span<const Index> val_ids, const LmTrainOptions& options,
                       const std::function<void(const TraceRow&)>& on_step = {});

// Mean negative log-likelihood in nats/token of the full next-token
// distribution over consecutive non-overlapping windows.
template <class T>
double evaluate_lm(const TransformerLM<T>& model, std::span<const Index> ids,
                   std::size_t batch = 8, std::size_t max_windows = 0);

struct GenerateOptions {
  std::size_t max_new = 64;
  std::size_t top_k = 40;
  double temperature = 1.0;  // <= 0 means greedy
  std::uint64_t seed = 0;
};

// Draws one id from a normalised distribution restricted to its top_k
// entries. top_k == 1 or temperature <= 0 is argmax (lowest id on ties).
template <class T>
std::size_t sample_token(std::span<const T> distribution, std::size_t top_k, double temperature,
                         std::mt19937_64& rng);

// Returns only the generated continuation.
template <class T>
std::vector<Index> generate(const TransformerLM<T>& model, std::span<const Index> prompt,
                            const GenerateOptions& options);

// Entropy in nats of the empirical unigram distribution of ids.
double unigram_entropy(std::span<const Index> ids);

// Cross-entropy in nats of ids under add-one smoothed unigram frequencies
// estimated from reference ids over a vocabulary of v.
double unigram_cross_entropy(std::span<const Index> reference, std::span<const Index> ids,
                             std::size_t v);

// Mean of the trailing `window` losses ending at index `end` (inclusive).
double smoothed_loss(const std::vector<TraceRow>& trace, std::size_t end, std::size_t window);

}  // namespace gv
