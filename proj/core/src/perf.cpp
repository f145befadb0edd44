#include "gv/perf.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "gv/error.hpp"
#include "gv/meter.hpp"

namespace gv::perf {
namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw InputError("byte count overflows 64 bits");
  return r;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) throw InputError("byte count overflows 64 bits");
  return r;
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto name = line.substr(colon + 1);
        name.erase(0, name.find_first_not_of(' '));
        return name;
      }
    }
  }
  return "unknown";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::uint64_t logits_bytes(std::uint64_t b, std::uint64_t s, std::uint64_t v,
                           std::uint64_t dtype_bytes) {
  return checked_mul(checked_mul(checked_mul(b, s), v), dtype_bytes);
}

std::uint64_t grouped_activation_bytes(std::uint64_t b, std::uint64_t s, std::uint64_t group_size,
                                       std::uint64_t groups, std::uint64_t dtype_bytes) {
  return checked_mul(checked_mul(checked_mul(b, s), checked_add(group_size, groups)), dtype_bytes);
}

std::uint64_t head_flops_dense(std::uint64_t d, std::uint64_t v) {
  return checked_add(checked_mul(checked_mul(2, d), v), v);
}

std::uint64_t head_flops_grouped(std::uint64_t d, std::uint64_t group_size, std::uint64_t groups) {
  const auto matmuls = checked_mul(checked_mul(2, d), checked_add(groups, group_size));
  return checked_add(matmuls, checked_mul(2, group_size));
}

Environment describe_environment(Precision precision) {
  Environment env;
  env.dtype = to_string(precision);
  env.workers = 1;
  const auto threads = std::thread::hardware_concurrency();
  env.hardware = cpu_model() + " (" + std::to_string(threads) + " hw threads)";
  return env;
}

CostReport analytic_report(std::uint64_t b, std::uint64_t s, std::uint64_t v, std::uint64_t d,
                           std::uint64_t group_size, Precision precision) {
  const auto partition = group_size == 0 ? GroupPartition::optimal(v)
                                         : GroupPartition::with_group_size(v, group_size);
  CostReport r;
  r.batch = b;
  r.seq = s;
  r.vocab = v;
  r.d = d;
  r.group_size = partition.group_size();
  r.groups = partition.num_groups();
  r.dtype_bytes = static_cast<std::uint64_t>(precision);
  r.logits_bytes = logits_bytes(b, s, v, r.dtype_bytes);
  r.grouped_bytes = grouped_activation_bytes(b, s, r.group_size, r.groups, r.dtype_bytes);
  r.head_flops_dense = head_flops_dense(d, v);
  r.head_flops_grouped = head_flops_grouped(d, r.group_size, r.groups);
  r.env = describe_environment(precision);
  return r;
}

std::string cost_csv_header() {
  return "batch,seq,vocab,d,group_size,groups,dtype_bytes,logits_bytes,grouped_bytes,"
         "head_flops_dense,head_flops_grouped,measured_peak_dense,measured_peak_grouped,"
         "tokens_per_second_dense,tokens_per_second_grouped,dtype,workers,hardware";
}

void write_cost_csv(std::ostream& out, std::span<const CostReport> reports) {
  out << cost_csv_header() << '\n';
  for (const auto& r : reports) {
    out << r.batch << ',' << r.seq << ',' << r.vocab << ',' << r.d << ',' << r.group_size << ','
        << r.groups << ',' << r.dtype_bytes << ',' << r.logits_bytes << ',' << r.grouped_bytes
        << ',' << r.head_flops_dense << ',' << r.head_flops_grouped << ','
        << r.measured_peak_dense << ',' << r.measured_peak_grouped << ','
        << r.tokens_per_second_dense << ',' << r.tokens_per_second_grouped << ',' << r.env.dtype
        << ',' << r.env.workers << ',' << csv_field(r.env.hardware) << '\n';
  }
}

void write_cost_table(std::ostream& out, const CostReport& r) {
  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
  std::ostringstream cfg;
  cfg << "b=" << r.batch << " s=" << r.seq << " v=" << r.vocab << " d=" << r.d
      << " S=" << r.group_size << " G=" << r.groups << " dtype=" << r.env.dtype;
  out << "config          " << cfg.str() << '\n';
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(26) << "quantity" << std::right << std::setw(18) << "dense"
      << std::setw(18) << "grouped" << std::setw(10) << "ratio" << '\n';
  out << std::left << std::setw(26) << "head activations (B)" << std::right << std::setw(18)
      << r.logits_bytes << std::setw(18) << r.grouped_bytes << std::setw(10)
      << ratio(double(r.logits_bytes), double(r.grouped_bytes)) << '\n';
  out << std::left << std::setw(26) << "head FLOPs / token" << std::right << std::setw(18)
      << r.head_flops_dense << std::setw(18) << r.head_flops_grouped << std::setw(10)
      << ratio(double(r.head_flops_dense), double(r.head_flops_grouped)) << '\n';
  if (r.measured_peak_dense >= 0 && r.measured_peak_grouped >= 0) {
    out << std::left << std::setw(26) << "measured peak elements" << std::right << std::setw(18)
        << r.measured_peak_dense << std::setw(18) << r.measured_peak_grouped << std::setw(10)
        << ratio(double(r.measured_peak_dense), double(r.measured_peak_grouped)) << '\n';
  }
  if (r.tokens_per_second_dense > 0 && r.tokens_per_second_grouped > 0) {
    out << std::left << std::setw(26) << "tokens / second" << std::right << std::setw(18)
        << r.tokens_per_second_dense << std::setw(18) << r.tokens_per_second_grouped
        << std::setw(10) << ratio(r.tokens_per_second_grouped, r.tokens_per_second_dense)
        << '\n';
  }
  out << "environment     " << r.env.hardware << ", workers=" << r.env.workers << '\n';
  out.unsetf(std::ios::floatfield);
}

template <class T>
std::int64_t measure_head_peak(HeadKind kind, std::size_t b, std::size_t s, std::size_t v,
                               std::size_t d, std::size_t group_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto head = make_head<T>(kind, d, v, group_size, rng);
  const std::size_t rows = b * s;
  auto h = Tensor<T>::randn({rows, d}, rng, T(1));
  h.set_requires_grad(true);
  std::vector<Index> labels(rows);
  std::uniform_int_distribution<Index> pick(0, static_cast<Index>(v - 1));
  for (auto& l : labels) l = pick(rng);
  // Make sure parameter gradient buffers exist before metering so both heads
  // are charged only for what a training step allocates.
  for (auto& p : head->parameters()) p.tensor.mutable_grad();
  h.mutable_grad();

  return element_meter([&] {
    auto loss = head->loss(h, labels);
    loss.total.backward();
  });
}

template <class T>
ThroughputResult throughput_bench(const LmConfig& config, const ThroughputOptions& options) {
  if (options.trials == 0) throw ConfigError("throughput: need at least one trial");
  TransformerLM<T> model(config, options.seed);
  const std::size_t n = options.batch * config.seq_len;
  std::mt19937_64 rng(options.seed + 1);
  std::uniform_int_distribution<Index> pick(0, static_cast<Index>(config.vocab - 1));
  std::vector<Index> inputs(n), labels(n);

  auto params = model.parameters();
  auto run_once = [&] {
    for (auto& x : inputs) x = pick(rng);
    for (auto& x : labels) x = pick(rng);
    for (auto& p : params) p.tensor.zero_grad();
    auto h = model.hidden(inputs, options.batch, config.seq_len);
    auto loss = model.head().loss(h, labels);
    loss.total.backward();
  };
  for (std::size_t i = 0; i < options.warmup; ++i) run_once();

  ThroughputResult result{config.head, config.d, config.vocab, 0.0, {}};
  for (std::size_t i = 0; i < options.trials; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run_once();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    result.trials.push_back(static_cast<double>(n) / elapsed.count());
  }
  auto sorted = result.trials;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  result.tokens_per_second =
      sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return result;
}

template std::int64_t measure_head_peak<float>(HeadKind, std::size_t, std::size_t, std::size_t,
                                               std::size_t, std::size_t, std::uint64_t);
template std::int64_t measure_head_peak<double>(HeadKind, std::size_t, std::size_t, std::size_t,
                                                std::size_t, std::size_t, std::uint64_t);
template ThroughputResult throughput_bench<float>(const LmConfig&, const ThroughputOptions&);
template ThroughputResult throughput_bench<double>(const LmConfig&, const ThroughputOptions&);

}  // namespace gv::perf
