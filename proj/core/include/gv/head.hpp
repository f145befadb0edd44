#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gv/grouping.hpp"
#include "gv/ops.hpp"
#include "gv/tensor.hpp"

// Vocabulary output layers.
//
// The grouped head never builds the [rows x v] logits tensor during
// training. A hidden state h with label id is split into (group g, local t):
//
//   group logits  = h . W_g                     [rows x G]
//   token logits  = W_P[g] * (h . W_s) + W_Q[g] [rows x S]
//   loss          = CE(group logits, g) + CE(token logits, t)
//
// At inference the full distribution is P(g) * P(t | g), laid out group by
// group, which is exactly the vocabulary order.
namespace gv {

enum class HeadKind { dense, grouped };

HeadKind parse_head_kind(const std::string& text);
std::string to_string(HeadKind kind);

template <class T>
struct GroupedHeadParams {
  Tensor<T> group_weight;   // [d x G]
  Tensor<T> shared_weight;  // [d x S]
  Tensor<T> scale;          // [G x S], row g scales group g
  Tensor<T> shift;          // [G x S], row g shifts group g

  // W_g, W_s ~ N(0, 0.02); scale = 1, shift = 0 so the head starts as the
  // plain shared linear.
  static GroupedHeadParams init(std::size_t d, const GroupPartition& partition,
                                std::mt19937_64& rng);

  std::size_t hidden_size() const { return group_weight.dim(0); }
  std::size_t parameter_count() const;
  std::vector<NamedTensor<T>> named() const;
};

template <class T>
struct DenseHeadParams {
  Tensor<T> weight;  // [d x v]
  Tensor<T> bias;    // [v]

  static DenseHeadParams init(std::size_t d, std::size_t v, std::mt19937_64& rng);
  std::size_t parameter_count() const;
  std::vector<NamedTensor<T>> named() const;
};

std::size_t grouped_parameter_count(std::size_t d, std::size_t groups, std::size_t group_size);
std::size_t dense_parameter_count(std::size_t d, std::size_t v);

// Shared matmul followed by per-row scale and shift gathered by group.
// h: [rows x d], groups: one index per row -> [rows x S].
template <class T>
Tensor<T> apply_linears_fast(const Tensor<T>& h, std::span<const Index> groups,
                             const GroupedHeadParams<T>& params);

// One independent linear per group, as an unfused reference.
template <class T>
struct GroupLinear {
  Tensor<T> weight;  // [d x S]
  Tensor<T> bias;    // [S]
};

// weight_g = W_s with column j scaled by W_P[g][j]; bias_g = W_Q[g].
template <class T>
std::vector<GroupLinear<T>> per_group_linears(const GroupedHeadParams<T>& params);

// Loops over groups, selecting the rows of each with a mask and applying that
// group's linear. Reference path only, not differentiable.
template <class T>
Tensor<T> apply_linears_slow(const Tensor<T>& h, std::span<const Index> groups,
                             const std::vector<GroupLinear<T>>& linears);

template <class T>
struct GroupedLoss {
  Tensor<T> group;  // CE over group logits
  Tensor<T> token;  // CE over within-group logits, padding masked
  Tensor<T> total;  // group + token
};

template <class T>
GroupedLoss<T> grouped_train_loss(const Tensor<T>& h, std::span<const Index> labels,
                                  const GroupPartition& partition,
                                  const GroupedHeadParams<T>& params);

// Full distribution over the v real ids for one hidden state [d].
template <class T>
Tensor<T> inference_distribution(std::span<const T> h, const GroupPartition& partition,
                                 const GroupedHeadParams<T>& params);

// -log P(label) under the full grouped distribution, per row. Uses
// log P(g) + log P(t | g), which needs only the label's group block.
template <class T>
std::vector<double> grouped_nll(const Tensor<T>& h, std::span<const Index> labels,
                                const GroupPartition& partition,
                                const GroupedHeadParams<T>& params);

template <class T>
Tensor<T> dense_train_loss(const Tensor<T>& h, std::span<const Index> labels,
                           const DenseHeadParams<T>& params);

template <class T>
Tensor<T> dense_distribution(std::span<const T> h, const DenseHeadParams<T>& params);

template <class T>
std::vector<double> dense_nll(const Tensor<T>& h, std::span<const Index> labels,
                              const DenseHeadParams<T>& params);

// Loss terms for one batch; group/token are undefined for the dense head.
template <class T>
struct HeadLoss {
  Tensor<T> total;
  Tensor<T> group;
  Tensor<T> token;
};

// Common interface so models can swap heads.
template <class T>
class OutputHead {
 public:
  virtual ~OutputHead() = default;

  virtual HeadKind kind() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t hidden_size() const = 0;
  virtual HeadLoss<T> loss(const Tensor<T>& h, std::span<const Index> labels) const = 0;
  virtual std::vector<T> distribution(std::span<const T> h) const = 0;
  virtual std::vector<double> nll(const Tensor<T>& h, std::span<const Index> labels) const = 0;
  // Most probable id for each row.
  virtual std::vector<Index> predict(const Tensor<T>& h) const;
  virtual std::vector<NamedTensor<T>> parameters() const = 0;
  virtual std::size_t parameter_count() const = 0;
  // One-line description, e.g. "head-v1 d G S v".
  virtual std::string manifest() const = 0;
};

template <class T>
class GroupedHead final : public OutputHead<T> {
 public:
  GroupedHead(std::size_t d, GroupPartition partition, std::mt19937_64& rng);
  GroupedHead(GroupPartition partition, GroupedHeadParams<T> params);

  HeadKind kind() const override { return HeadKind::grouped; }
  std::size_t vocab_size() const override { return partition_.vocab_size(); }
  std::size_t hidden_size() const override { return params_.hidden_size(); }
  HeadLoss<T> loss(const Tensor<T>& h, std::span<const Index> labels) const override;
  std::vector<T> distribution(std::span<const T> h) const override;
  std::vector<double> nll(const Tensor<T>& h, std::span<const Index> labels) const override;
  std::vector<NamedTensor<T>> parameters() const override { return params_.named(); }
  std::size_t parameter_count() const override { return params_.parameter_count(); }
  std::string manifest() const override;

  // Argmax of the group predictor for each row.
  std::vector<Index> predict_groups(const Tensor<T>& h) const;

  const GroupPartition& partition() const noexcept { return partition_; }
  const GroupedHeadParams<T>& params() const noexcept { return params_; }

 private:
  GroupPartition partition_;
  GroupedHeadParams<T> params_;
};

template <class T>
class DenseHead final : public OutputHead<T> {
 public:
  DenseHead(std::size_t d, std::size_t v, std::mt19937_64& rng);
  explicit DenseHead(DenseHeadParams<T> params);

  HeadKind kind() const override { return HeadKind::dense; }
  std::size_t vocab_size() const override { return params_.bias.numel(); }
  std::size_t hidden_size() const override { return params_.weight.dim(0); }
  HeadLoss<T> loss(const Tensor<T>& h, std::span<const Index> labels) const override;
  std::vector<T> distribution(std::span<const T> h) const override;
  std::vector<double> nll(const Tensor<T>& h, std::span<const Index> labels) const override;
  // Argmax of the logits, computed in row blocks.
  std::vector<Index> predict(const Tensor<T>& h) const override;
  std::vector<NamedTensor<T>> parameters() const override { return params_.named(); }
  std::size_t parameter_count() const override { return params_.parameter_count(); }
  std::string manifest() const override;

  const DenseHeadParams<T>& params() const noexcept { return params_; }

 private:
  DenseHeadParams<T> params_;
};

// Builds a head of the given kind. group_size 0 means ceil(sqrt(v)).
template <class T>
std::unique_ptr<OutputHead<T>> make_head(HeadKind kind, std::size_t d, std::size_t v,
                                         std::size_t group_size, std::mt19937_64& rng);

// Head files: `head.manifest` holding the manifest line plus the named
// tensors in GVT1 form.
template <class T>
void save_head(const std::filesystem::path& dir, const OutputHead<T>& head);
template <class T>
std::unique_ptr<OutputHead<T>> load_head(const std::filesystem::path& dir);
// Parses a manifest line back into a freshly initialised head of the right
// shape (parameters still to be loaded).
template <class T>
std::unique_ptr<OutputHead<T>> head_from_manifest(const std::string& line);

}  // namespace gv
