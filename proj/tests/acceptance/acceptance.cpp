// Acceptance runner: one PASS/FAIL line per criterion. With arguments, runs
// only the listed criteria (e.g. `gv_acceptance 1 5 6`). Exit status is
// non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "gv/bpe.hpp"
#include "gv/experiment.hpp"
#include "gv/grouping.hpp"
#include "gv/head.hpp"
#include "gv/lm_train.hpp"
#include "gv/multiclass.hpp"
#include "gv/perf.hpp"
#include "gv/transformer.hpp"

using namespace gv;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and configurations.
constexpr double kSumTol = 1e-6;
constexpr double kLinearsTolF32 = 1e-5;
constexpr double kLinearsTolF64 = 1e-12;
constexpr double kBruteTol = 1e-12;
constexpr double kGradTol = 1e-4;

constexpr std::size_t kLmBatch = 8;
constexpr std::size_t kLmSeq = 128;
constexpr std::size_t kLmSteps = 2000;
constexpr std::size_t kLmVocab = 1024;
constexpr std::uint64_t kLmSeed = 1;
constexpr double kValFraction = 0.1;
constexpr std::size_t kSmoothWindow = 50;

constexpr std::size_t kAblationSteps = 500;

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

fs::path out_dir() {
  const char* root = std::getenv("GV_OUT");
  fs::path dir = fs::path(root && *root ? root : "runs") / "acceptance";
  fs::create_directories(dir);
  return dir;
}

template <class T>
GroupedHeadParams<T> random_grouped(std::size_t d, const GroupPartition& p, std::mt19937_64& rng,
                                    double stddev) {
  auto params = GroupedHeadParams<T>::init(d, p, rng);
  for (auto* t : {&params.group_weight, &params.shared_weight, &params.scale, &params.shift}) {
    auto r = Tensor<T>::randn(t->shape(), rng, T(stddev));
    std::copy(r.values().begin(), r.values().end(), t->values().begin());
  }
  return params;
}

// ---- 1 -----------------------------------------------------------------------
Result normalisation() {
  std::mt19937_64 rng(101);
  const std::size_t vocabs[] = {6, 1024, 50176};
  const double scales[] = {0.02, 0.5, 3.0, 10.0};
  double worst = 0;
  std::size_t configs = 0;
  bool shapes_ok = true;
  for (std::size_t i = 0; i < 1002; ++i) {
    const std::size_t v = vocabs[i % 3];
    const std::size_t d = 1 + rng() % 16;
    std::size_t s = 0;  // auto on every fourth config, else log-uniform in [1, v]
    if (i % 4 != 0) {
      const double u = std::uniform_real_distribution<double>(0, std::log(double(v)))(rng);
      s = std::clamp<std::size_t>(static_cast<std::size_t>(std::exp(u)), 1, v);
    }
    const auto p = s == 0 ? GroupPartition::optimal(v) : GroupPartition::with_group_size(v, s);
    const auto params = random_grouped<float>(d, p, rng, scales[rng() % 4]);
    auto h = Tensor<float>::randn({d}, rng, 1.0f);
    const auto dist = inference_distribution<float>(h.values(), p, params);
    shapes_ok = shapes_ok && dist.numel() == v;
    double sum = 0;
    for (auto x : dist.values()) sum += x;
    worst = std::max(worst, std::abs(sum - 1.0));
    ++configs;
  }
  return {shapes_ok && worst <= kSumTol,
          std::to_string(configs) + " configs over v in {6,1024,50176}, max |sum-1| = " +
              fmt(worst) + " (tol 1e-6)"};
}

// ---- 2 -----------------------------------------------------------------------
template <class T>
double linears_worst(std::mt19937_64& rng, std::size_t instances) {
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t rows = 1 + rng() % 256;  // b*s <= 256
    const std::size_t groups = 1 + rng() % 64;
    const std::size_t s = 1 + rng() % 64;
    const std::size_t d = 1 + rng() % 32;
    const auto p = GroupPartition::with_group_count(groups * s, groups);
    const auto params = random_grouped<T>(d, p, rng, 0.5);
    auto h = Tensor<T>::randn({rows, d}, rng, T(1));
    std::vector<Index> g(rows);
    for (auto& x : g) x = rng() % groups;
    const auto fast = apply_linears_fast(h, g, params);
    const auto slow = apply_linears_slow(h, g, per_group_linears(params));
    for (std::size_t k = 0; k < fast.numel(); ++k) {
      worst = std::max(worst, std::abs(double(fast.at(k)) - double(slow.at(k))));
    }
  }
  return worst;
}

Result oracle_equivalence() {
  std::mt19937_64 rng(202);
  const double w32 = linears_worst<float>(rng, 100);
  const double w64 = linears_worst<double>(rng, 100);
  return {w32 <= kLinearsTolF32 && w64 <= kLinearsTolF64,
          "100 instances each, max |fast-slow| fp32 " + fmt(w32) + " (tol 1e-5), fp64 " +
              fmt(w64) + " (tol 1e-12)"};
}

// ---- 3 -----------------------------------------------------------------------
Result brute_force() {
  std::mt19937_64 rng(303);
  const std::size_t v = 6, d = 4;
  const auto p = GroupPartition::with_group_count(v, 2);
  if (p.group_size() != 3) return {false, "unexpected partition"};
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto params = random_grouped<double>(d, p, rng, 1.0);
    auto h = Tensor<double>::randn({d}, rng, 1.0);
    const auto W = [&](const Tensor<double>& t, std::size_t r, std::size_t c) {
      return t.values()[r * t.dim(1) + c];
    };
    // Two softmaxes materialised by hand.
    double zg[2], pg[2];
    for (std::size_t g = 0; g < 2; ++g) {
      zg[g] = 0;
      for (std::size_t k = 0; k < d; ++k) zg[g] += h.at(k) * W(params.group_weight, k, g);
    }
    const double mg = std::max(zg[0], zg[1]);
    const double ng = std::exp(zg[0] - mg) + std::exp(zg[1] - mg);
    for (std::size_t g = 0; g < 2; ++g) pg[g] = std::exp(zg[g] - mg) / ng;
    std::vector<double> expect(v);
    for (std::size_t g = 0; g < 2; ++g) {
      double logit[3], mx = -1e300, z = 0;
      for (std::size_t s = 0; s < 3; ++s) {
        double shared = 0;
        for (std::size_t k = 0; k < d; ++k) shared += h.at(k) * W(params.shared_weight, k, s);
        logit[s] = W(params.scale, g, s) * shared + W(params.shift, g, s);
        mx = std::max(mx, logit[s]);
      }
      for (double l : logit) z += std::exp(l - mx);
      for (std::size_t s = 0; s < 3; ++s) expect[g * 3 + s] = pg[g] * std::exp(logit[s] - mx) / z;
    }
    const auto got = inference_distribution<double>(h.values(), p, params);
    for (std::size_t t = 0; t < v; ++t) worst = std::max(worst, std::abs(got.at(t) - expect[t]));
  }
  return {worst <= kBruteTol, "200 random heads at v=6, G=2, max |diff| = " + fmt(worst) +
                                  " (tol 1e-12)"};
}

// ---- 4 -----------------------------------------------------------------------
Result gradient_suite() {
  std::mt19937_64 rng(404);
  std::vector<std::pair<std::string, testing::GradCheckResult>> checks;

  {  // grouped head, padded partition
    const auto p = GroupPartition::with_group_size(10, 4);
    auto params = random_grouped<double>(5, p, rng, 0.5);
    auto h = Tensor<double>::randn({6, 5}, rng, 1.0);
    h.set_requires_grad(true);
    const std::vector<Index> labels{9, 0, 5, 8, 3, 9};
    auto named = params.named();
    named.push_back({"h", h});
    checks.emplace_back("grouped head", testing::grad_check(named, [&] {
                          return grouped_train_loss(h, labels, p, params).total;
                        }));
  }
  {  // dense head
    auto params = DenseHeadParams<double>::init(6, 9, rng);
    for (auto& x : params.bias.values()) x = std::normal_distribution<double>(0, 0.5)(rng);
    auto h = Tensor<double>::randn({5, 6}, rng, 1.0);
    h.set_requires_grad(true);
    const std::vector<Index> labels{0, 8, 3, 3, 7};
    auto named = params.named();
    named.push_back({"h", h});
    checks.emplace_back("dense head", testing::grad_check(named, [&] {
                          return dense_train_loss(h, labels, params);
                        }));
  }
  for (const auto kind : {HeadKind::dense, HeadKind::grouped}) {
    LmConfig c;
    c.d = 8;
    c.layers = 2;
    c.heads = 2;
    c.seq_len = 5;
    c.vocab = 13;
    c.head = kind;
    c.group_size = 4;
    TransformerLM<double> model(c, 405);
    for (auto& p : model.parameters()) {
      for (auto& x : p.tensor.values()) x += std::normal_distribution<double>(0, 0.1)(rng);
    }
    std::vector<Index> ids(10), labels(10);
    for (auto& x : ids) x = rng() % 13;
    for (auto& x : labels) x = rng() % 13;
    checks.emplace_back("transformer+" + to_string(kind), testing::grad_check(model.parameters(), [&] {
                          return model.head().loss(model.hidden(ids, 2, 5), labels).total;
                        }));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, r] : checks) {
    pass = pass && r.worst_rel < kGradTol;
    detail += name + " worst " + fmt(r.worst_rel, 2) + " (" + r.worst_name + "); ";
  }
  return {pass, detail + "tol 1e-4"};
}

// ---- 5 -----------------------------------------------------------------------
Result memory_model() {
  const auto logits = perf::logits_bytes(32, 512, 50000, 4);
  const double reference_bytes = 3.32e9;
  const double rel = std::abs(double(logits) - reference_bytes) / reference_bytes;
  const auto grouped = perf::grouped_activation_bytes(32, 512, 224, 224, 4);
  const double reduction = double(logits) / double(grouped);
  const auto dense_peak = perf::measure_head_peak<float>(HeadKind::dense, 8, 64, 4096, 64, 0, 5);
  const auto grouped_peak =
      perf::measure_head_peak<float>(HeadKind::grouped, 8, 64, 4096, 64, 64, 5);
  const double measured = double(dense_peak) / double(grouped_peak);
  const bool pass = logits == 3276800000ULL && rel <= 0.02 && reduction >= 100 && measured >= 10;
  return {pass, "logits_bytes " + std::to_string(logits) + " (" + fmt(rel * 100, 3) +
                    "% from 3.32 GB), analytic reduction " + fmt(reduction) +
                    "x (>= 100), measured peak " + std::to_string(dense_peak) + " / " +
                    std::to_string(grouped_peak) + " = " + fmt(measured) + "x (>= 10)"};
}

// ---- 6 -----------------------------------------------------------------------
Result optimality_sweep() {
  std::size_t bad = 0, library_bad = 0, all_within = 0;
  std::size_t first_bad = 0;
  for (std::size_t v = 1; v <= 10000; ++v) {
    std::size_t best = SIZE_MAX;
    std::vector<std::size_t> argmins;
    for (std::size_t s = 1; s <= v; ++s) {
      const std::size_t cost = s + (v + s - 1) / s;
      if (cost < best) {
        best = cost;
        argmins.assign(1, s);
      } else if (cost == best) {
        argmins.push_back(s);
      }
    }
    const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(double(v))));
    const auto near = [&](std::size_t s) { return s + 1 >= root && s <= root + 1; };
    if (std::none_of(argmins.begin(), argmins.end(), near)) {
      if (bad++ == 0) first_bad = v;
    }
    if (std::all_of(argmins.begin(), argmins.end(), near)) ++all_within;
    const auto shape = optimal_group_size(v);
    if (shape.group_size + shape.groups != best) ++library_bad;
  }
  return {bad == 0 && library_bad == 0,
          "v = 1..10000: minimiser within +-1 of ceil(sqrt v) for " + std::to_string(10000 - bad) +
              " (first miss " + std::to_string(first_bad) + "), every minimiser within +-1 for " +
              std::to_string(all_within) + ", library choice optimal for " +
              std::to_string(10000 - library_bad)};
}

// ---- shared corpus for 7 and 8 -----------------------------------------------
struct Corpus {
  std::vector<Index> ids;
  IdSplit split;
  std::size_t vocab = 0;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus out;
    const auto text = read_text_file(GV_CORPUS);
    bpe::TrainOptions options;
    options.target_vocab = kLmVocab - 1;
    const bpe::Tokenizer tokenizer(bpe::train(text, options));
    out.vocab = tokenizer.vocab_size();
    out.ids = encode_corpus(tokenizer, text);
    out.split = split_tail(out.ids, kValFraction);
    return out;
  }();
  return c;
}

// Counting oracle, independent of the library helper.
double corpus_unigram_entropy(const std::vector<Index>& ids) {
  std::map<Index, std::size_t> counts;
  for (auto id : ids) ++counts[id];
  double h = 0;
  for (const auto& [id, n] : counts) {
    const double p = double(n) / double(ids.size());
    h -= p * std::log(p);
  }
  return h;
}

LmConfig desk_config(HeadKind kind) {
  LmConfig c;
  c.d = 64;
  c.layers = 4;
  c.heads = 2;
  c.seq_len = kLmSeq;
  c.vocab = kLmVocab;
  c.head = kind;
  c.group_size = 0;
  return c;
}

// ---- 7 -----------------------------------------------------------------------
Result training_sanity() {
  const auto& data = corpus();
  if (data.vocab != kLmVocab) return {false, "tokenizer produced v=" + std::to_string(data.vocab)};
  const double entropy = corpus_unigram_entropy(data.ids);
  LmTrainOptions options;
  options.steps = kLmSteps;
  options.batch = kLmBatch;
  options.seed = kLmSeed;

  const auto dir = out_dir();
  std::map<HeadKind, double> val;
  std::map<HeadKind, double> drop;
  for (const auto kind : {HeadKind::grouped, HeadKind::dense}) {
    TransformerLM<float> model(desk_config(kind), kLmSeed);
    const auto result = train_lm(model, data.split.train, {}, options);
    val[kind] = evaluate_lm(model, data.split.val, kLmBatch);
    const double start = result.trace.front().loss;
    const double end = smoothed_loss(result.trace, result.trace.size() - 1, kSmoothWindow);
    drop[kind] = 1.0 - end / start;
    std::ofstream csv(dir / ("lm_" + to_string(kind) + "_loss.csv"));
    write_loss_csv(csv, result.trace);
  }
  const double g = val[HeadKind::grouped], d = val[HeadKind::dense];
  const double gap = std::abs(g - d) / d;
  const bool pass = g < entropy && d < entropy && gap <= 0.10 && drop[HeadKind::grouped] >= 0.30 &&
                    drop[HeadKind::dense] >= 0.30;
  return {pass, "b=" + std::to_string(kLmBatch) + " s=" + std::to_string(kLmSeq) + ", val NLL grouped " +
                    fmt(g) + " dense " + fmt(d) + " (unigram entropy " + fmt(entropy) +
                    "), relative gap " + fmt(gap * 100, 3) + "% (<= 10%), smoothed drop grouped " +
                    fmt(drop[HeadKind::grouped] * 100, 3) + "% dense " +
                    fmt(drop[HeadKind::dense] * 100, 3) + "% (>= 30%)"};
}

// ---- 8 -----------------------------------------------------------------------
Result ablation_shape() {
  const auto& data = corpus();
  AblationOptions options;
  options.group_sizes = {8, 16, 32, 64, 128};
  options.train.steps = kAblationSteps;
  options.train.batch = kLmBatch;
  options.train.seed = kLmSeed;
  options.model_seed = kLmSeed;
  const auto rows =
      run_ablation<float>(desk_config(HeadKind::grouped), data.split.train, data.split.val, options);
  {
    std::ofstream csv(out_dir() / "ablation.csv");
    write_ablation_csv(csv, rows);
  }
  const auto min_peak = std::min_element(rows.begin(), rows.end(), [](auto& a, auto& b) {
    return a.peak_elements < b.peak_elements;
  });
  const bool unique_min = std::count_if(rows.begin(), rows.end(), [&](auto& r) {
                            return r.peak_elements == min_peak->peak_elements;
                          }) == 1;
  double lo = 1e300, hi = -1e300;
  std::string losses;
  for (const auto& r : rows) {
    lo = std::min(lo, r.val_loss);
    hi = std::max(hi, r.val_loss);
    losses += std::to_string(r.group_size) + ":" + fmt(r.val_loss) + "/" +
              std::to_string(r.peak_elements) + " ";
  }
  return {min_peak->group_size == 32 && unique_min && hi - lo <= 0.3,
          "S:val/peak " + losses + "; peak minimum at S=" + std::to_string(min_peak->group_size) +
              ", val spread " + fmt(hi - lo) + " (<= 0.3)"};
}

// ---- 9 -----------------------------------------------------------------------
Result throughput_direction() {
  perf::ThroughputOptions options;
  options.batch = 2;
  options.trials = 5;
  options.warmup = 1;
  std::vector<perf::ThroughputResult> rows;
  std::vector<double> ratios;
  std::string detail;
  for (const std::size_t d : {128, 256, 512}) {
    LmConfig c;
    c.d = d;
    c.layers = 4;
    c.heads = 2;
    c.seq_len = 64;
    c.vocab = 32768;
    c.head = HeadKind::dense;
    const auto dense = perf::throughput_bench<float>(c, options);
    c.head = HeadKind::grouped;
    const auto grouped = perf::throughput_bench<float>(c, options);
    ratios.push_back(grouped.tokens_per_second / dense.tokens_per_second);
    detail += "d=" + std::to_string(d) + " " + fmt(ratios.back(), 3) + "x ";
    rows.push_back(dense);
    rows.push_back(grouped);
  }
  {
    std::ofstream csv(out_dir() / "throughput.csv");
    write_throughput_csv(csv, rows);
  }
  const bool shrinking = ratios[0] > ratios[1] && ratios[1] > ratios[2];
  return {ratios[0] >= 1.5 && shrinking,
          "grouped/dense tokens/s at v=32768: " + detail + "(>= 1.5 at d=128, strictly shrinking)"};
}

// ---- 10 ----------------------------------------------------------------------
Result multiclass() {
  mc::DatasetOptions dopt;  // 10^4 labels, 5 per label, sigma 0.3
  const auto data = mc::generate_dataset(dopt);
  const auto split = mc::split_last_per_label(data);
  std::map<HeadKind, mc::ClassifierResult> results;
  std::ofstream csv(out_dir() / "classify.csv");
  csv << kClassifyCsvHeader << '\n';
  for (const auto kind : {HeadKind::dense, HeadKind::grouped}) {
    mc::ClassifierOptions options;
    options.head = kind;
    options.seed = 7;
    results[kind] = mc::train_classifier<float>(split.train, split.val, options);
    write_classify_csv(csv, kind, results[kind].epochs);
  }
  const auto& g = results[HeadKind::grouped];
  const auto& d = results[HeadKind::dense];
  bool group_dominates = true;
  std::string trace;
  for (const auto& e : g.epochs) {
    group_dominates = group_dominates && e.group_accuracy >= e.val_accuracy;
    trace += fmt(e.group_accuracy, 3) + ">=" + fmt(e.val_accuracy, 3) + " ";
  }
  const double ga = g.epochs.back().val_accuracy, da = d.epochs.back().val_accuracy;
  return {group_dominates && ga >= da - 0.02,
          "group vs token accuracy per epoch " + trace + "; final grouped " + fmt(ga, 4) +
              " dense " + fmt(da, 4) + " (grouped >= dense - 0.02); head params " +
              std::to_string(g.head_parameters) + " vs " + std::to_string(d.head_parameters)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Result()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "normalisation", 60, normalisation},
      {2, "oracle-equivalence", 60, oracle_equivalence},
      {3, "brute-force-head", 60, brute_force},
      {4, "gradient-suite", 300, gradient_suite},
      {5, "memory-model", 60, memory_model},
      {6, "optimality-sweep", 60, optimality_sweep},
      {7, "training-sanity", 1800, training_sanity},
      {8, "ablation-shape", 3600, ablation_shape},
      {9, "throughput-direction", 600, throughput_direction},
      {10, "multiclass", 1800, multiclass},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = r.pass && in_time;
    if (!pass) ++failures;
    std::cout << "A" << c.id << ' ' << (pass ? "PASS" : "FAIL") << ' ' << c.name << ": "
              << r.detail << "; " << fmt(secs, 4) << " s (limit " << c.limit_seconds << " s"
              << (in_time ? "" : ", exceeded") << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
