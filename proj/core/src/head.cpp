#include "gv/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gv/error.hpp"
#include "gv/kernels.hpp"
#include "gv/serialize.hpp"

namespace gv {
namespace {

constexpr double kMaskLogit = -1e30;

template <class T>
void require_hidden(const Tensor<T>& h, std::size_t d, const char* what) {
  if (h.rank() != 2 || h.dim(1) != d) {
    throw DimensionError(std::string(what) + ": hidden states " + shape_string(h.shape()) +
                         " do not have width " + std::to_string(d));
  }
}

// Number of leading groups holding at least one real id.
std::size_t live_groups(const GroupPartition& p) {
  return (p.vocab_size() + p.group_size() - 1) / p.group_size();
}

struct LabelSplit {
  std::vector<Index> groups;
  std::vector<Index> locals;
  std::vector<Index> limits;
};

LabelSplit split_labels(std::span<const Index> labels, const GroupPartition& p) {
  LabelSplit out;
  out.groups.reserve(labels.size());
  out.locals.reserve(labels.size());
  out.limits.reserve(labels.size());
  for (auto label : labels) {
    const auto c = p.locate(label);
    out.groups.push_back(static_cast<Index>(c.group));
    out.locals.push_back(static_cast<Index>(c.local));
    out.limits.push_back(static_cast<Index>(p.valid_in_group(c.group)));
  }
  return out;
}

template <class T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

HeadKind parse_head_kind(const std::string& text) {
  if (text == "dense") return HeadKind::dense;
  if (text == "grouped") return HeadKind::grouped;
  throw ConfigError("unknown head kind '" + text + "' (expected dense or grouped)");
}

std::string to_string(HeadKind kind) { return kind == HeadKind::dense ? "dense" : "grouped"; }

std::size_t grouped_parameter_count(std::size_t d, std::size_t groups, std::size_t group_size) {
  return d * groups + d * group_size + 2 * groups * group_size;
}

std::size_t dense_parameter_count(std::size_t d, std::size_t v) { return d * v + v; }

template <class T>
GroupedHeadParams<T> GroupedHeadParams<T>::init(std::size_t d, const GroupPartition& partition,
                                                std::mt19937_64& rng) {
  const std::size_t G = partition.num_groups(), S = partition.group_size();
  GroupedHeadParams p;
  p.group_weight = Tensor<T>::randn({d, G}, rng, T(0.02));
  p.shared_weight = Tensor<T>::randn({d, S}, rng, T(0.02));
  p.scale = Tensor<T>({G, S}, T(1));
  p.shift = Tensor<T>({G, S}, T(0));
  for (auto* t : {&p.group_weight, &p.shared_weight, &p.scale, &p.shift}) t->set_requires_grad(true);
  return p;
}

template <class T>
std::size_t GroupedHeadParams<T>::parameter_count() const {
  return group_weight.numel() + shared_weight.numel() + scale.numel() + shift.numel();
}

template <class T>
std::vector<NamedTensor<T>> GroupedHeadParams<T>::named() const {
  return {{"head.group_weight", group_weight},
          {"head.shared_weight", shared_weight},
          {"head.scale", scale},
          {"head.shift", shift}};
}

template <class T>
DenseHeadParams<T> DenseHeadParams<T>::init(std::size_t d, std::size_t v, std::mt19937_64& rng) {
  DenseHeadParams p;
  p.weight = Tensor<T>::randn({d, v}, rng, T(0.02));
  p.bias = Tensor<T>({v}, T(0));
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

template <class T>
std::size_t DenseHeadParams<T>::parameter_count() const {
  return weight.numel() + bias.numel();
}

template <class T>
std::vector<NamedTensor<T>> DenseHeadParams<T>::named() const {
  return {{"head.weight", weight}, {"head.bias", bias}};
}

template <class T>
Tensor<T> apply_linears_fast(const Tensor<T>& h, std::span<const Index> groups,
                             const GroupedHeadParams<T>& params) {
  auto shared = matmul(h, params.shared_weight);
  return scale_shift_rows(shared, params.scale, params.shift, groups);
}

template <class T>
std::vector<GroupLinear<T>> per_group_linears(const GroupedHeadParams<T>& params) {
  const std::size_t d = params.shared_weight.dim(0), S = params.shared_weight.dim(1);
  const std::size_t G = params.scale.dim(0);
  std::vector<GroupLinear<T>> out;
  out.reserve(G);
  for (std::size_t g = 0; g < G; ++g) {
    GroupLinear<T> lin{Tensor<T>({d, S}), Tensor<T>({S})};
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < S; ++j)
        lin.weight.at(k, j) = params.shared_weight.at(k, j) * params.scale.at(g, j);
    for (std::size_t j = 0; j < S; ++j) lin.bias.at(j) = params.shift.at(g, j);
    out.push_back(std::move(lin));
  }
  return out;
}

template <class T>
Tensor<T> apply_linears_slow(const Tensor<T>& h, std::span<const Index> groups,
                             const std::vector<GroupLinear<T>>& linears) {
  if (linears.empty()) throw DimensionError("apply_linears_slow: no group linears");
  const std::size_t d = linears.front().weight.dim(0), S = linears.front().weight.dim(1);
  require_hidden(h, d, "apply_linears_slow");
  const std::size_t rows = h.dim(0);
  if (groups.size() != rows) {
    throw DimensionError("apply_linears_slow: " + std::to_string(groups.size()) +
                         " group indices for " + std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (groups[i] >= linears.size()) {
      throw IndexError("apply_linears_slow: group " + std::to_string(groups[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(linears.size()) +
                       ")");
    }
  }

  NoGradGuard no_grad;
  Tensor<T> output({rows, S});
  for (std::size_t g = 0; g < linears.size(); ++g) {
    std::vector<Index> selected;
    for (std::size_t i = 0; i < rows; ++i)
      if (groups[i] == g) selected.push_back(static_cast<Index>(i));
    if (selected.empty()) continue;
    auto group_input = gather_rows(h, selected);
    auto group_output = linear(group_input, linears[g].weight, linears[g].bias);
    for (std::size_t r = 0; r < selected.size(); ++r)
      for (std::size_t j = 0; j < S; ++j) output.at(selected[r], j) = group_output.at(r, j);
  }
  return output;
}

template <class T>
GroupedLoss<T> grouped_train_loss(const Tensor<T>& h, std::span<const Index> labels,
                                  const GroupPartition& partition,
                                  const GroupedHeadParams<T>& params) {
  require_hidden(h, params.hidden_size(), "grouped_train_loss");
  if (labels.size() != h.dim(0)) {
    throw DimensionError("grouped_train_loss: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(h.dim(0)) + " rows");
  }
  const auto split = split_labels(labels, partition);

  std::vector<Index> group_limits;
  const std::size_t live = live_groups(partition);
  if (live < partition.num_groups()) group_limits.assign(labels.size(), static_cast<Index>(live));

  GroupedLoss<T> out;
  auto group_logits = matmul(h, params.group_weight);
  out.group = cross_entropy(group_logits, split.groups, group_limits);
  auto token_logits = apply_linears_fast(h, split.groups, params);
  out.token = cross_entropy(token_logits, split.locals, split.limits);
  out.total = add(out.group, out.token);
  return out;
}

template <class T>
Tensor<T> inference_distribution(std::span<const T> h, const GroupPartition& partition,
                                 const GroupedHeadParams<T>& params) {
  const std::size_t d = params.hidden_size();
  if (h.size() != d) {
    throw DimensionError("inference_distribution: hidden state of length " +
                         std::to_string(h.size()) + ", expected " + std::to_string(d));
  }
  require_finite(h, "inference_distribution: hidden state");
  const std::size_t G = partition.num_groups(), S = partition.group_size();
  const std::size_t v = partition.vocab_size();

  std::vector<T> group_prob(G);
  kernels::gemm_nn(h.data(), params.group_weight.values().data(), group_prob.data(), 1, d, G,
                   false);
  for (std::size_t g = 0; g < G; ++g)
    if (partition.valid_in_group(g) == 0) group_prob[g] += T(kMaskLogit);
  kernels::softmax_inplace<T>(group_prob);

  std::vector<T> shared(S);
  kernels::gemm_nn(h.data(), params.shared_weight.values().data(), shared.data(), 1, d, S, false);

  Tensor<T> out({v});
  auto o = out.values();
  std::vector<T> token(S);
  const T* sc = params.scale.values().data();
  const T* sh = params.shift.values().data();
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t valid = partition.valid_in_group(g);
    if (valid == 0) continue;
    for (std::size_t t = 0; t < S; ++t) {
      token[t] = sc[g * S + t] * shared[t] + sh[g * S + t];
      if (t >= valid) token[t] += T(kMaskLogit);
    }
    kernels::softmax_inplace<T>(token);
    for (std::size_t t = 0; t < valid; ++t) o[g * S + t] = group_prob[g] * token[t];
  }
  return out;
}

template <class T>
std::vector<double> grouped_nll(const Tensor<T>& h, std::span<const Index> labels,
                                const GroupPartition& partition,
                                const GroupedHeadParams<T>& params) {
  require_hidden(h, params.hidden_size(), "grouped_nll");
  if (labels.size() != h.dim(0)) throw DimensionError("grouped_nll: label count mismatch");
  const auto split = split_labels(labels, partition);
  const std::size_t G = partition.num_groups(), S = partition.group_size();
  const std::size_t live = live_groups(partition);

  NoGradGuard no_grad;
  auto group_logits = matmul(h, params.group_weight);
  auto token_logits = apply_linears_fast(h, split.groups, params);
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    auto grow = group_logits.values().subspan(r * G, live);
    auto trow = token_logits.values().subspan(r * S, split.limits[r]);
    const T lp_group = grow[split.groups[r]] - kernels::log_sum_exp<T>(grow);
    const T lp_token = trow[split.locals[r]] - kernels::log_sum_exp<T>(trow);
    out[r] = -(static_cast<double>(lp_group) + static_cast<double>(lp_token));
  }
  return out;
}

template <class T>
Tensor<T> dense_train_loss(const Tensor<T>& h, std::span<const Index> labels,
                           const DenseHeadParams<T>& params) {
  require_hidden(h, params.weight.dim(0), "dense_train_loss");
  const std::size_t v = params.bias.numel();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= v) {
      throw IndexError("token id " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside vocabulary of " + std::to_string(v));
    }
  }
  auto logits = linear(h, params.weight, params.bias);
  return cross_entropy(logits, labels);
}

template <class T>
Tensor<T> dense_distribution(std::span<const T> h, const DenseHeadParams<T>& params) {
  const std::size_t d = params.weight.dim(0), v = params.bias.numel();
  if (h.size() != d) {
    throw DimensionError("dense_distribution: hidden state of length " +
                         std::to_string(h.size()) + ", expected " + std::to_string(d));
  }
  require_finite(h, "dense_distribution: hidden state");
  Tensor<T> out({v});
  auto o = out.values();
  kernels::gemm_nn(h.data(), params.weight.values().data(), o.data(), 1, d, v, false);
  const auto b = params.bias.values();
  for (std::size_t j = 0; j < v; ++j) o[j] += b[j];
  kernels::softmax_inplace(o);
  return out;
}

template <class T>
std::vector<double> dense_nll(const Tensor<T>& h, std::span<const Index> labels,
                              const DenseHeadParams<T>& params) {
  require_hidden(h, params.weight.dim(0), "dense_nll");
  const std::size_t v = params.bias.numel();
  NoGradGuard no_grad;
  auto logits = linear(h, params.weight, params.bias);
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= v) throw IndexError("dense_nll: label outside vocabulary");
    auto row = logits.values().subspan(r * v, v);
    out[r] = static_cast<double>(kernels::log_sum_exp<T>(row) - row[labels[r]]);
  }
  return out;
}

template <class T>
std::vector<Index> OutputHead<T>::predict(const Tensor<T>& h) const {
  const std::size_t d = hidden_size();
  require_hidden(h, d, "predict");
  std::vector<Index> out(h.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto dist = distribution(h.values().subspan(r * d, d));
    out[r] = static_cast<Index>(argmax<T>(dist));
  }
  return out;
}

template <class T>
GroupedHead<T>::GroupedHead(std::size_t d, GroupPartition partition, std::mt19937_64& rng)
    : partition_(partition), params_(GroupedHeadParams<T>::init(d, partition, rng)) {}

template <class T>
GroupedHead<T>::GroupedHead(GroupPartition partition, GroupedHeadParams<T> params)
    : partition_(partition), params_(std::move(params)) {
  if (params_.group_weight.dim(1) != partition_.num_groups() ||
      params_.shared_weight.dim(1) != partition_.group_size() ||
      params_.scale.shape() != Shape{partition_.num_groups(), partition_.group_size()} ||
      params_.shift.shape() != params_.scale.shape()) {
    throw DimensionError("grouped head: parameter shapes do not match the partition");
  }
}

template <class T>
HeadLoss<T> GroupedHead<T>::loss(const Tensor<T>& h, std::span<const Index> labels) const {
  auto l = grouped_train_loss(h, labels, partition_, params_);
  return {l.total, l.group, l.token};
}

template <class T>
std::vector<T> GroupedHead<T>::distribution(std::span<const T> h) const {
  auto dist = inference_distribution(h, partition_, params_);
  return {dist.values().begin(), dist.values().end()};
}

template <class T>
std::vector<double> GroupedHead<T>::nll(const Tensor<T>& h, std::span<const Index> labels) const {
  return grouped_nll(h, labels, partition_, params_);
}

template <class T>
std::string GroupedHead<T>::manifest() const {
  std::ostringstream os;
  os << "head-v1 " << params_.hidden_size() << ' ' << partition_.num_groups() << ' '
     << partition_.group_size() << ' ' << partition_.vocab_size();
  return os.str();
}

template <class T>
std::vector<Index> GroupedHead<T>::predict_groups(const Tensor<T>& h) const {
  require_hidden(h, params_.hidden_size(), "predict_groups");
  NoGradGuard no_grad;
  auto logits = matmul(h, params_.group_weight);
  const std::size_t G = partition_.num_groups(), live = live_groups(partition_);
  std::vector<Index> out(h.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = static_cast<Index>(argmax<T>(logits.values().subspan(r * G, live)));
  }
  return out;
}

template <class T>
DenseHead<T>::DenseHead(std::size_t d, std::size_t v, std::mt19937_64& rng)
    : params_(DenseHeadParams<T>::init(d, v, rng)) {}

template <class T>
DenseHead<T>::DenseHead(DenseHeadParams<T> params) : params_(std::move(params)) {
  if (params_.weight.rank() != 2 || params_.bias.numel() != params_.weight.dim(1)) {
    throw DimensionError("dense head: weight and bias shapes disagree");
  }
}

template <class T>
HeadLoss<T> DenseHead<T>::loss(const Tensor<T>& h, std::span<const Index> labels) const {
  return {dense_train_loss(h, labels, params_), {}, {}};
}

template <class T>
std::vector<T> DenseHead<T>::distribution(std::span<const T> h) const {
  auto dist = dense_distribution(h, params_);
  return {dist.values().begin(), dist.values().end()};
}

template <class T>
std::vector<double> DenseHead<T>::nll(const Tensor<T>& h, std::span<const Index> labels) const {
  return dense_nll(h, labels, params_);
}

template <class T>
std::vector<Index> DenseHead<T>::predict(const Tensor<T>& h) const {
  const std::size_t d = hidden_size(), v = vocab_size();
  require_hidden(h, d, "predict");
  const std::size_t rows = h.dim(0);
  constexpr std::size_t kBlock = 64;
  std::vector<T> logits(kBlock * v);
  const auto b = params_.bias.values();
  std::vector<Index> out(rows);
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t n = std::min(kBlock, rows - r0);
    kernels::gemm_nn(h.values().data() + r0 * d, params_.weight.values().data(), logits.data(), n,
                     d, v, false);
    for (std::size_t r = 0; r < n; ++r) {
      T* row = logits.data() + r * v;
      for (std::size_t j = 0; j < v; ++j) row[j] += b[j];
      out[r0 + r] = static_cast<Index>(argmax<T>(std::span<const T>(row, v)));
    }
  }
  return out;
}

template <class T>
std::string DenseHead<T>::manifest() const {
  std::ostringstream os;
  os << "dense-v1 " << hidden_size() << ' ' << vocab_size();
  return os.str();
}

template <class T>
std::unique_ptr<OutputHead<T>> make_head(HeadKind kind, std::size_t d, std::size_t v,
                                         std::size_t group_size, std::mt19937_64& rng) {
  if (kind == HeadKind::dense) return std::make_unique<DenseHead<T>>(d, v, rng);
  auto partition = group_size == 0 ? GroupPartition::optimal(v)
                                   : GroupPartition::with_group_size(v, group_size);
  return std::make_unique<GroupedHead<T>>(d, partition, rng);
}

template <class T>
std::unique_ptr<OutputHead<T>> head_from_manifest(const std::string& line) {
  std::istringstream is(line);
  std::string tag;
  is >> tag;
  std::mt19937_64 rng(0);
  if (tag == "head-v1") {
    std::size_t d = 0, G = 0, S = 0, v = 0;
    if (!(is >> d >> G >> S >> v)) throw InputError("malformed head manifest: " + line);
    auto partition = GroupPartition::with_group_size(v, S);
    if (partition.num_groups() != G) {
      throw InputError("head manifest: G=" + std::to_string(G) + " inconsistent with v=" +
                       std::to_string(v) + " S=" + std::to_string(S));
    }
    return std::make_unique<GroupedHead<T>>(d, partition, rng);
  }
  if (tag == "dense-v1") {
    std::size_t d = 0, v = 0;
    if (!(is >> d >> v)) throw InputError("malformed head manifest: " + line);
    return std::make_unique<DenseHead<T>>(d, v, rng);
  }
  throw InputError("unknown head manifest: " + line);
}

template <class T>
void save_head(const std::filesystem::path& dir, const OutputHead<T>& head) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "head.manifest") << head.manifest() << '\n';
  save_tensors(dir, head.parameters());
}

template <class T>
std::unique_ptr<OutputHead<T>> load_head(const std::filesystem::path& dir) {
  std::ifstream in(dir / "head.manifest");
  if (!in) throw InputError("missing " + (dir / "head.manifest").string());
  std::string line;
  std::getline(in, line);
  auto head = head_from_manifest<T>(line);
  auto params = head->parameters();
  load_tensors_into(dir, params);
  return head;
}

#define GV_INSTANTIATE_HEAD(T)                                                                 \
  template struct GroupedHeadParams<T>;                                                        \
  template struct DenseHeadParams<T>;                                                          \
  template class OutputHead<T>;                                                                \
  template class GroupedHead<T>;                                                               \
  template class DenseHead<T>;                                                                 \
  template Tensor<T> apply_linears_fast(const Tensor<T>&, std::span<const Index>,              \
                                        const GroupedHeadParams<T>&);                          \
  template std::vector<GroupLinear<T>> per_group_linears(const GroupedHeadParams<T>&);         \
  template Tensor<T> apply_linears_slow(const Tensor<T>&, std::span<const Index>,              \
                                        const std::vector<GroupLinear<T>>&);                   \
  template GroupedLoss<T> grouped_train_loss(const Tensor<T>&, std::span<const Index>,         \
                                             const GroupPartition&,                            \
                                             const GroupedHeadParams<T>&);                     \
  template Tensor<T> inference_distribution(std::span<const T>, const GroupPartition&,         \
                                            const GroupedHeadParams<T>&);                      \
  template std::vector<double> grouped_nll(const Tensor<T>&, std::span<const Index>,           \
                                           const GroupPartition&, const GroupedHeadParams<T>&); \
  template Tensor<T> dense_train_loss(const Tensor<T>&, std::span<const Index>,                \
                                      const DenseHeadParams<T>&);                              \
  template Tensor<T> dense_distribution(std::span<const T>, const DenseHeadParams<T>&);        \
  template std::vector<double> dense_nll(const Tensor<T>&, std::span<const Index>,             \
                                         const DenseHeadParams<T>&);                           \
  template std::unique_ptr<OutputHead<T>> make_head<T>(HeadKind, std::size_t, std::size_t,     \
                                                       std::size_t, std::mt19937_64&);         \
  template std::unique_ptr<OutputHead<T>> head_from_manifest<T>(const std::string&);           \
  template void save_head<T>(const std::filesystem::path&, const OutputHead<T>&);              \
  template std::unique_ptr<OutputHead<T>> load_head<T>(const std::filesystem::path&);

GV_INSTANTIATE_HEAD(float)
GV_INSTANTIATE_HEAD(double)

}  // namespace gv
