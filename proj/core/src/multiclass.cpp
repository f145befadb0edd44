#include "gv/multiclass.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gv/error.hpp"
#include "gv/ops.hpp"
#include "gv/serialize.hpp"

namespace gv::mc {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::size_t block_offset(std::size_t attribute) {
  std::size_t off = 0;
  for (std::size_t a = 0; a < attribute; ++a) off += kAttributes[a].options;
  return off;
}

template <class T>
Tensor<T> he_normal(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  auto w = Tensor<T>::randn({fan_in, fan_out}, rng, static_cast<T>(std::sqrt(2.0 / fan_in)));
  w.set_requires_grad(true);
  return w;
}

template <class T>
Tensor<T> zeros_param(std::size_t n) {
  Tensor<T> b({n}, T(0));
  b.set_requires_grad(true);
  return b;
}

template <class T>
Tensor<T> rows_of(const Dataset& data, std::span<const std::size_t> index) {
  Tensor<T> x({index.size(), data.dim}, T(0));
  auto out = x.node()->value.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const double* src = data.features.data() + index[r] * data.dim;
    for (std::size_t c = 0; c < data.dim; ++c) out[r * data.dim + c] = static_cast<T>(src[c]);
  }
  return x;
}

}  // namespace

std::size_t label_count() {
  std::size_t n = 1;
  for (const auto& a : kAttributes) n *= a.options;
  return n;
}

std::size_t feature_dim() {
  return block_offset(kNumAttributes);
}

double signal_strength(std::size_t attribute) {
  if (attribute >= kNumAttributes) throw IndexError("signal_strength: attribute out of range");
  return 1.0 + 0.1 * static_cast<double>(attribute % 3);
}

std::uint64_t label_index(const AttributeTuple& tuple) {
  std::uint64_t id = 0;
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    if (tuple[a] >= kAttributes[a].options) {
      throw InputError(std::string("attribute ") + kAttributes[a].name + " value " +
                       std::to_string(tuple[a]) + " outside [0, " +
                       std::to_string(kAttributes[a].options) + ")");
    }
    id = id * kAttributes[a].options + tuple[a];
  }
  return id;
}

AttributeTuple decode_label(std::uint64_t label) {
  if (label >= label_count()) {
    throw InputError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(label_count()) + ")");
  }
  AttributeTuple t{};
  for (std::size_t a = kNumAttributes; a-- > 0;) {
    t[a] = label % kAttributes[a].options;
    label /= kAttributes[a].options;
  }
  return t;
}

Dataset generate_dataset(const DatasetOptions& options) {
  if (!(options.sigma >= 0)) throw InputError("noise sigma must be non-negative");
  if (options.n_labels == 0 || options.n_labels > label_count()) {
    throw InputError("n_labels must be in [1, " + std::to_string(label_count()) + "]");
  }
  if (options.per_label == 0) throw InputError("per_label must be positive");

  Dataset data;
  data.dim = feature_dim();
  data.n_labels = options.n_labels;
  data.sigma = options.sigma;
  data.seed = options.seed;
  const std::size_t n = options.n_labels * options.per_label;
  data.labels.resize(n);
  data.features.assign(n * data.dim, 0.0);

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t label = 0; label < options.n_labels; ++label) {
    const auto tuple = decode_label(label);
    std::mt19937_64 rng(splitmix64(options.seed ^ splitmix64(label)));
    for (std::size_t k = 0; k < options.per_label; ++k) {
      const std::size_t row = label * options.per_label + k;
      data.labels[row] = label;
      double* x = data.features.data() + row * data.dim;
      for (std::size_t a = 0; a < kNumAttributes; ++a) {
        x[block_offset(a) + tuple[a]] = signal_strength(a);
      }
      if (options.sigma > 0) {
        for (std::size_t c = 0; c < data.dim; ++c) x[c] += options.sigma * noise(rng);
      }
    }
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  std::ostringstream header;
  header.precision(17);
  header << "smc-v1 " << data.dim << ' ' << data.n_labels << ' ' << data.size() << ' '
         << data.sigma << ' ' << data.seed << '\n';
  out << header.str();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t label = data.labels[i];
    if constexpr (std::endian::native == std::endian::big) label = __builtin_bswap64(label);
    out.write(reinterpret_cast<const char*>(&label), sizeof label);
    const auto row = std::span<const double>(data.features).subspan(i * data.dim, data.dim);
    write_tensor(out, Tensor<double>::from({data.dim}, row));
  }
  if (!out) throw ConfigError("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string magic;
  Dataset data;
  std::size_t n = 0;
  header >> magic >> data.dim >> data.n_labels >> n >> data.sigma >> data.seed;
  if (magic != "smc-v1" || !header) throw ConfigError(path.string() + ": not an smc-v1 dataset");
  data.labels.resize(n);
  data.features.resize(n * data.dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t label = 0;
    in.read(reinterpret_cast<char*>(&label), sizeof label);
    if (!in) throw ConfigError(path.string() + ": truncated at sample " + std::to_string(i));
    if constexpr (std::endian::native == std::endian::big) label = __builtin_bswap64(label);
    data.labels[i] = label;
    const auto row = read_tensor<double>(in);
    if (row.numel() != data.dim) {
      throw ConfigError(path.string() + ": sample " + std::to_string(i) + " has wrong dimension");
    }
    std::copy(row.values().begin(), row.values().end(), data.features.begin() + i * data.dim);
  }
  return data;
}

Split split_last_per_label(const Dataset& data) {
  Split s;
  for (Dataset* d : {&s.train, &s.val}) {
    d->dim = data.dim;
    d->n_labels = data.n_labels;
    d->sigma = data.sigma;
    d->seed = data.seed;
  }
  // Index of the last occurrence of each label.
  std::vector<std::size_t> last(data.n_labels, data.size());
  for (std::size_t i = 0; i < data.size(); ++i) last.at(data.labels[i]) = i;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Dataset& dst = last[data.labels[i]] == i ? s.val : s.train;
    dst.labels.push_back(data.labels[i]);
    dst.features.insert(dst.features.end(), data.features.begin() + i * data.dim,
                        data.features.begin() + (i + 1) * data.dim);
  }
  return s;
}

template <class T>
ClassifierResult train_classifier(const Dataset& train, const Dataset& val,
                                  const ClassifierOptions& options,
                                  const std::function<void(const EpochRow&)>& on_epoch) {
  if (train.size() == 0) throw InputError("classifier: empty training set");
  if (train.dim != val.dim) throw DimensionError("classifier: train/val dimensions differ");
  if (options.batch == 0 || options.accumulate == 0) {
    throw ConfigError("classifier: batch and accumulate must be positive");
  }
  const std::size_t labels = train.n_labels;
  std::mt19937_64 rng(options.seed);
  const std::size_t w = options.hidden;
  auto w1 = he_normal<T>(train.dim, w, rng);
  auto b1 = zeros_param<T>(w);
  auto w2 = he_normal<T>(w, w, rng);
  auto b2 = zeros_param<T>(w);
  std::mt19937_64 head_rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
  auto head = make_head<T>(options.head, w, labels, 0, head_rng);

  std::vector<Tensor<T>> params{w1, b1, w2, b2};
  for (auto& p : head->parameters()) params.push_back(p.tensor);
  AdamOptions adam;
  adam.lr = options.lr;
  Adam<T> optimiser(params, adam);

  auto encode = [&](const Tensor<T>& x) {
    auto a = relu(linear(x, w1, b1));
    return relu(linear(a, w2, b2));
  };

  ClassifierResult result;
  result.head_parameters = head->parameter_count();
  result.encoder_parameters = w1.numel() + b1.numel() + w2.numel() + b2.numel();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(options.seed ^ 0xD1B54A32D192ED03ULL);
  const T micro_scale = T(1) / static_cast<T>(options.accumulate);

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t micro = 0;
    optimiser.zero_grad();
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t n = std::min(options.batch, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, n);
      auto x = rows_of<T>(train, idx);
      std::vector<Index> y(n);
      for (std::size_t r = 0; r < n; ++r) y[r] = static_cast<Index>(train.labels[idx[r]]);
      auto loss = head->loss(encode(x), y);
      const double value = static_cast<double>(loss.total.item());
      if (!std::isfinite(value)) {
        throw NumericError("classifier diverged in epoch " + std::to_string(epoch) +
                           " after " + std::to_string(optimiser.steps_taken()) + " steps");
      }
      loss_sum += value;
      scale(loss.total, micro_scale).backward();
      ++micro;
      const bool last_batch = start + n >= order.size();
      if (micro % options.accumulate == 0 || last_batch) {
        optimiser.step();
        optimiser.zero_grad();
      }
    }

    EpochRow row{epoch, optimiser.steps_taken(), loss_sum / static_cast<double>(micro), 0.0,
                 -1.0};
    {
      NoGradGuard no_grad;
      std::size_t correct = 0, group_correct = 0;
      const auto* grouped = dynamic_cast<const GroupedHead<T>*>(head.get());
      for (std::size_t start = 0; start < val.size(); start += 256) {
        const std::size_t n = std::min<std::size_t>(256, val.size() - start);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), start);
        auto h = encode(rows_of<T>(val, idx));
        const auto pred = head->predict(h);
        for (std::size_t r = 0; r < n; ++r) correct += pred[r] == val.labels[start + r];
        if (grouped) {
          const auto groups = grouped->predict_groups(h);
          for (std::size_t r = 0; r < n; ++r) {
            const auto coord = grouped->partition().locate(val.labels[start + r]);
            group_correct += groups[r] == coord.group;
          }
        }
      }
      const double total = static_cast<double>(std::max<std::size_t>(val.size(), 1));
      row.val_accuracy = static_cast<double>(correct) / total;
      if (grouped) row.group_accuracy = static_cast<double>(group_correct) / total;
    }
    result.epochs.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

template ClassifierResult train_classifier<float>(const Dataset&, const Dataset&,
                                                  const ClassifierOptions&,
                                                  const std::function<void(const EpochRow&)>&);
template ClassifierResult train_classifier<double>(const Dataset&, const Dataset&,
                                                   const ClassifierOptions&,
                                                   const std::function<void(const EpochRow&)>&);

}  // namespace gv::mc
