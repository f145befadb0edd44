#include "gv/lm_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace gv {
namespace {

constexpr std::uint64_t kBatchStream = 0xD1B54A32D192ED03ULL;

template <class T>
std::vector<Tensor<T>> as_list(const std::vector<NamedTensor<T>>& named) {
  std::vector<Tensor<T>> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::size_t step, const std::string& detail)
    : NumericError("training diverged at step " + std::to_string(step) + ": " + detail),
      step_(step) {}

template <class T>
LmTrainResult train_lm(TransformerLM<T>& model, std::span<const Index> train_ids,
                       std::span<const Index> val_ids, const LmTrainOptions& options,
                       const std::function<void(const TraceRow&)>& on_step) {
  const std::size_t seq = model.config().seq_len;
  if (train_ids.size() <= seq + 1) {
    throw InputError("training corpus of " + std::to_string(train_ids.size()) +
                     " ids is not longer than seq_len " + std::to_string(seq));
  }
  for (auto id : train_ids) {
    if (id >= model.config().vocab) {
      throw ConfigError("training id " + std::to_string(id) + " outside model vocabulary " +
                        std::to_string(model.config().vocab));
    }
  }
  if (options.batch == 0) throw ConfigError("batch size must be positive");

  Adam<T> optimiser(as_list(model.parameters()), options.adam);
  std::mt19937_64 rng(options.seed ^ kBatchStream);
  std::uniform_int_distribution<std::size_t> offset(0, train_ids.size() - seq - 1);

  LmTrainResult result;
  std::vector<Index> inputs(options.batch * seq), labels(options.batch * seq);
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (std::size_t b = 0; b < options.batch; ++b) {
      const std::size_t start = offset(rng);
      std::copy_n(train_ids.begin() + start, seq, inputs.begin() + b * seq);
      std::copy_n(train_ids.begin() + start + 1, seq, labels.begin() + b * seq);
    }
    TraceRow row{step, 0.0, std::nullopt, std::nullopt};
    try {
      optimiser.zero_grad();
      auto h = model.hidden(inputs, options.batch, seq);
      auto loss = model.head().loss(h, labels);
      row.loss = static_cast<double>(loss.total.item());
      if (loss.group.defined()) {
        row.loss_group = static_cast<double>(loss.group.item());
        row.loss_token = static_cast<double>(loss.token.item());
      }
      if (!std::isfinite(row.loss)) throw NumericError("loss is not finite");
      loss.total.backward();
      optimiser.step();
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const NumericError& e) {
      throw TrainingDiverged(step, e.what());
    }
    result.trace.push_back(row);
    if (on_step) on_step(row);

    const bool last = step + 1 == options.steps;
    const bool periodic = options.eval_every > 0 && (step + 1) % options.eval_every == 0;
    if (!val_ids.empty() && (last || periodic)) {
      result.evals.push_back(
          {step + 1, evaluate_lm(model, val_ids, options.batch, options.eval_windows)});
    }
  }
  return result;
}

template <class T>
double evaluate_lm(const TransformerLM<T>& model, std::span<const Index> ids, std::size_t batch,
                   std::size_t max_windows) {
  const std::size_t seq = model.config().seq_len;
  for (auto id : ids) {
    if (id >= model.config().vocab) {
      throw ConfigError("evaluation id " + std::to_string(id) + " outside model vocabulary " +
                        std::to_string(model.config().vocab));
    }
  }
  if (ids.size() < 2) throw InputError("evaluation needs at least two ids");

  // Window starts; the final window may be shorter than seq_len.
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t start = 0; start + 1 < ids.size(); start += seq) {
    windows.emplace_back(start, std::min(seq, ids.size() - 1 - start));
    if (max_windows && windows.size() == max_windows) break;
  }

  NoGradGuard no_grad;
  double total = 0;
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < windows.size()) {
    const std::size_t len = windows[i].second;
    std::size_t n = 0;
    std::vector<Index> inputs, labels;
    while (i < windows.size() && n < batch && windows[i].second == len) {
      const auto start = windows[i].first;
      inputs.insert(inputs.end(), ids.begin() + start, ids.begin() + start + len);
      labels.insert(labels.end(), ids.begin() + start + 1, ids.begin() + start + 1 + len);
      ++n;
      ++i;
    }
    auto h = model.hidden(inputs, n, len);
    for (double v : model.head().nll(h, labels)) total += v;
    count += labels.size();
  }
  return total / static_cast<double>(count);
}

template <class T>
std::size_t sample_token(std::span<const T> distribution, std::size_t top_k, double temperature,
                         std::mt19937_64& rng) {
  if (distribution.empty()) throw InputError("sample_token: empty distribution");
  if (top_k == 0) throw ConfigError("top_k must be at least 1");
  std::vector<std::size_t> order(distribution.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return distribution[a] > distribution[b] ||
                             (distribution[a] == distribution[b] && a < b);
                    });
  if (k == 1 || temperature <= 0) return order[0];

  std::vector<double> weights(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double p = static_cast<double>(distribution[order[i]]);
    weights[i] = p > 0 ? std::exp(std::log(p) / temperature) : 0.0;
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0)) return order[0];
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < k; ++i) {
    if (u < weights[i]) return order[i];
    u -= weights[i];
  }
  // Rounding left u past the last bucket; take the last candidate with mass.
  for (std::size_t i = k; i-- > 0;)
    if (weights[i] > 0) return order[i];
  return order[0];
}

template <class T>
std::vector<Index> generate(const TransformerLM<T>& model, std::span<const Index> prompt,
                            const GenerateOptions& options) {
  if (prompt.empty()) throw InputError("generate: prompt must contain at least one id");
  if (options.top_k == 0) throw ConfigError("top_k must be at least 1");
  const std::size_t seq = model.config().seq_len, d = model.config().d;
  std::vector<Index> context(prompt.begin(), prompt.end());
  std::vector<Index> out;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t n = 0; n < options.max_new; ++n) {
    const std::size_t len = std::min(seq, context.size());
    std::span<const Index> window(context.data() + context.size() - len, len);
    auto h = model.hidden(window, 1, len);
    auto last = h.values().subspan((len - 1) * d, d);
    const auto dist = model.head().distribution(last);
    const auto next =
        static_cast<Index>(sample_token<T>(dist, options.top_k, options.temperature, rng));
    out.push_back(next);
    context.push_back(next);
  }
  return out;
}

double unigram_entropy(std::span<const Index> ids) {
  if (ids.empty()) return 0.0;
  std::unordered_map<Index, std::size_t> counts;
  for (auto id : ids) ++counts[id];
  std::vector<std::size_t> sorted;
  for (const auto& [id, c] : counts) sorted.push_back(c);
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(ids.size());
  double h = 0;
  for (auto c : sorted) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double unigram_cross_entropy(std::span<const Index> reference, std::span<const Index> ids,
                             std::size_t v) {
  std::vector<double> counts(v, 1.0);
  for (auto id : reference) {
    if (id >= v) throw IndexError("unigram_cross_entropy: id outside vocabulary");
    counts[id] += 1.0;
  }
  const double total = static_cast<double>(reference.size() + v);
  double nll = 0;
  for (auto id : ids) {
    if (id >= v) throw IndexError("unigram_cross_entropy: id outside vocabulary");
    nll -= std::log(counts[id] / total);
  }
  return ids.empty() ? 0.0 : nll / static_cast<double>(ids.size());
}

double smoothed_loss(const std::vector<TraceRow>& trace, std::size_t end, std::size_t window) {
  if (trace.empty() || end >= trace.size() || window == 0) {
    throw IndexError("smoothed_loss: index outside trace");
  }
  const std::size_t begin = end + 1 >= window ? end + 1 - window : 0;
  double s = 0;
  for (std::size_t i = begin; i <= end; ++i) s += trace[i].loss;
  return s / static_cast<double>(end + 1 - begin);
}

#define GV_INSTANTIATE_LM(T)                                                                  \
  template LmTrainResult train_lm<T>(TransformerLM<T>&, std::span<const Index>,               \
                                     std::span<const Index>, const LmTrainOptions&,           \
                                     const std::function<void(const TraceRow&)>&);            \
  template double evaluate_lm<T>(const TransformerLM<T>&, std::span<const Index>, std::size_t, \
                                 std::size_t);                                                \
  template std::size_t sample_token<T>(std::span<const T>, std::size_t, double,               \
                                       std::mt19937_64&);                                     \
  template std::vector<Index> generate<T>(const TransformerLM<T>&, std::span<const Index>,    \
                                          const GenerateOptions&);

GV_INSTANTIATE_LM(float)
GV_INSTANTIATE_LM(double)

}  // namespace gv
