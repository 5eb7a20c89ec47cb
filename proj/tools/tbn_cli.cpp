// tbn: command-line front end for two-bit network quantization, inference,
// training and memory accounting.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 verification
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tbn/bytes.hpp"
#include "tbn/conv.hpp"
#include "tbn/error.hpp"
#include "tbn/packed.hpp"
#include "tbn/tensor_io.hpp"
#include "tbn/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

constexpr double kOracleTolerance = 1e-4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double rel_dev(std::span<const float> got, std::span<const float> want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(got[i]) - want[i]) /
                                std::max(1.0, std::fabs(static_cast<double>(want[i]))));
  return worst;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  tbn::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                         text.size()));
}

// ---------------------------------------------------------------- quantize

struct MetaLine {
  tbn::LayerMeta meta;
  bool has_bias = false;
};

std::vector<MetaLine> parse_layer_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) tbn::fail(tbn::ErrorCode::IoError, "cannot open " + path);
  std::vector<MetaLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<long long> v;
    long long x;
    while (fields >> x) v.push_back(x);
    if (!fields.eof())
      tbn::fail(tbn::ErrorCode::CorruptLength, path + ":" + std::to_string(lineno) +
                                                   ": non-integer field");
    if (v.empty()) continue;
    if (v.size() != 6 && v.size() != 7)
      tbn::fail(tbn::ErrorCode::CorruptLength,
                path + ":" + std::to_string(lineno) +
                    ": expected 'in_c out_c fh fw stride pad [has_bias]'");
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] < (i == 5 || i == 6 ? 0 : 1) || v[i] > (1 << 16) || (i == 6 && v[i] > 1))
        tbn::fail(tbn::ErrorCode::CorruptLength, path + ":" + std::to_string(lineno) +
                                                     ": field " + std::to_string(i + 1) +
                                                     " out of range");
    auto u = [&](std::size_t i) { return static_cast<std::uint32_t>(v[i]); };
    out.push_back({{u(0), u(1), u(2), u(3), u(4), u(5)}, v.size() == 7 && v[6] == 1});
  }
  return out;
}

int cmd_quantize(const std::string& input, const std::string& meta_path,
                 const std::string& output, const std::string& report_path) {
  const auto metas = parse_layer_meta(meta_path);
  const auto tensors = tbn::decode_tbnf(tbn::read_file_bytes(input));
  tbn::TbnModel model;
  std::ostringstream report;
  bool degenerate = false;
  std::size_t next = 0;
  for (std::size_t l = 0; l < metas.size(); ++l) {
    const tbn::LayerMeta& m = metas[l].meta;
    if (next >= tensors.size())
      tbn::fail(tbn::ErrorCode::CorruptLength, "no weight tensor for layer " + std::to_string(l));
    const tbn::Tensor& weights = tensors[next++];
    const std::size_t n = m.filter_elements();
    if (weights.size() != n * m.out_channels)
      tbn::fail(tbn::ErrorCode::ShapeMismatch,
                "layer " + std::to_string(l) + " weight tensor has " +
                    std::to_string(weights.size()) + " values, meta needs " +
                    std::to_string(n * m.out_channels));
    std::vector<tbn::TwoBitFilter> filters;
    for (std::size_t k = 0; k < m.out_channels; ++k) {
      const tbn::Tensor w(tbn::Shape{m.in_channels, m.filter_h, m.filter_w},
                          weights.values().subspan(k * n, n));
      auto [filter, r] = tbn::quantize_filter(w);
      degenerate |= r.degenerate;
      report << "filter=" << l << ':' << k << " alpha=" << fmt("%.7g", r.alpha_star)
             << " J=" << fmt("%.9g", r.error_j) << " b1=" << r.b1_count << " b2=" << r.b2_count
             << " degenerate=" << (r.degenerate ? 1 : 0) << '\n';
      filters.push_back(std::move(filter));
    }
    std::optional<std::vector<float>> bias;
    if (metas[l].has_bias) {
      if (next >= tensors.size())
        tbn::fail(tbn::ErrorCode::CorruptLength, "no bias tensor for layer " + std::to_string(l));
      const tbn::Tensor& b = tensors[next++];
      if (b.size() != m.out_channels)
        tbn::fail(tbn::ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " bias length");
      bias.emplace(b.values().begin(), b.values().end());
    }
    model.layers.push_back(tbn::make_layer(m, filters, std::move(bias)));
  }
  if (next != tensors.size())
    tbn::fail(tbn::ErrorCode::CorruptLength, std::to_string(tensors.size() - next) +
                                                 " TBNF records left unused by the layer meta");
  tbn::save_model_file(model, output);
  if (!report_path.empty()) write_text_atomic(report_path, report.str());
  std::cout << "layers " << model.layers.size() << "\nbytes " << tbn::serialized_size(model)
            << '\n';
  if (degenerate) {
    std::cerr << "tbn: all-zero filter(s) had alpha clamped to "
              << fmt("%g", tbn::kDegenerateAlpha) << '\n';
    return kExitVerify;
  }
  return kExitOk;
}

// ------------------------------------------------------------------- infer

int cmd_infer(const std::string& model_path, const std::string& input, bool oracle) {
  const tbn::TbnModel model = tbn::load_model_file(model_path);
  const auto tensors = tbn::decode_tbnf(tbn::read_file_bytes(input));
  if (tensors.size() != 1)
    tbn::fail(tbn::ErrorCode::ShapeMismatch, "expected exactly one input tensor, got " +
                                                 std::to_string(tensors.size()));
  const tbn::Tensor& x = tensors[0];
  if (x.rank() != 3 && x.rank() != 4)
    tbn::fail(tbn::ErrorCode::ShapeMismatch, "input must be (c,h,w) or (b,c,h,w), got " +
                                                 x.shape().to_string());
  const std::size_t batch = x.rank() == 4 ? x.dim(0) : 1;
  const tbn::Shape item = x.rank() == 4 ? tbn::Shape{x.dim(1), x.dim(2), x.dim(3)} : x.shape();
  double worst = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const tbn::Tensor xi(item, x.values().subspan(b * item.element_count(), item.element_count()));
    const tbn::Tensor out = tbn::model_forward(model, xi);
    std::cout << "item " << b << " argmax " << tbn::argmax(out.values()) << " scores";
    for (float v : out.values()) std::cout << ' ' << fmt("%.9g", v);
    std::cout << '\n';
    if (oracle) worst = std::max(worst, rel_dev(out.values(),
                                                tbn::model_forward_reference(model, xi).values()));
  }
  if (oracle) {
    std::cout << "oracle max_rel_dev " << fmt("%.3e", worst) << '\n';
    if (!(worst <= kOracleTolerance)) {
      std::cerr << "tbn: multiplication-free path deviates from reference by " << worst << '\n';
      return kExitVerify;
    }
  }
  return kExitOk;
}

// -------------------------------------------------------------- train-demo

struct DemoOptions {
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::string mnist_dir;
  std::size_t mnist_limit = 0;
  std::size_t samples = tbn::kDemoSamples;
  std::size_t classes = tbn::kDemoClasses;
  bool no_clip = false;
  bool keep_first_last_float = false;
  bool baseline = false;
  std::string out;
  std::string log;
};

int cmd_train_demo(const DemoOptions& o) {
  const tbn::Dataset data = o.mnist_dir.empty()
                                ? tbn::make_synth_dataset(o.seed, o.samples, o.classes)
                                : tbn::load_mnist(o.mnist_dir, o.mnist_limit);
  const tbn::NetSpec net = tbn::toy_net(data.item_shape(), data.classes);
  tbn::TrainConfig config = tbn::desk_scale_config(o.epochs, o.seed);
  config.clip = !o.no_clip;
  config.keep_first_last_float = o.keep_first_last_float;

  std::ostringstream log;
  auto emit = [&](const std::string& line) {
    std::cout << line << '\n';
    log << line << '\n';
  };
  emit("dataset " + std::string(o.mnist_dir.empty() ? "synthetic" : "idx") + " samples " +
       std::to_string(data.size()) + " classes " + std::to_string(data.classes));

  if (o.baseline) {
    // Full-precision reference run: same schedule, first five epochs only.
    tbn::TrainConfig base = config;
    base.two_bit = false;
    base.epochs = std::min<std::size_t>(config.epochs, 5);
    const tbn::TrainState s = tbn::train(net, data, base, [&](const tbn::EpochRecord& r) {
      emit("baseline " + tbn::format_record(r));
    });
    emit("baseline final train_acc=" + fmt("%.4f", tbn::evaluate_accuracy(s, data, base)));
  }

  const tbn::TrainState state = tbn::train(net, data, config, [&](const tbn::EpochRecord& r) {
    emit(tbn::format_record(r));
  });
  const tbn::TbnModel model = tbn::export_inference_model(state);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t stride = data.item_shape().element_count();
    const tbn::Tensor x(data.item_shape(), data.images.values().subspan(i * stride, stride));
    correct += tbn::argmax(tbn::model_forward(model, x).values()) ==
               static_cast<std::size_t>(data.labels[i]);
  }
  emit("final train_acc=" + fmt("%.4f", static_cast<double>(correct) /
                                            static_cast<double>(data.size())) +
       " model_bytes=" + std::to_string(tbn::serialized_size(model)));
  tbn::save_model_file(model, o.out);
  if (!o.log.empty()) write_text_atomic(o.log, log.str());
  return kExitOk;
}

// ----------------------------------------------------------------- memsize

const std::map<std::string, std::uint64_t>& presets() {
  static const std::map<std::string, std::uint64_t> table{
      {"alexnet", 61'000'000},
      {"resnet18", 11'689'512},
      {"vgg19", 143'667'240},
  };
  return table;
}

int cmd_memsize(std::optional<std::uint64_t> params, const std::string& preset,
                std::uint64_t alpha_overhead) {
  if (params.has_value() == !preset.empty())
    throw UsageError("memsize needs exactly one of --params or --preset");
  std::uint64_t n = 0;
  if (params) {
    n = *params;
  } else {
    auto it = presets().find(preset);
    if (it == presets().end()) throw UsageError("unknown preset '" + preset + "'");
    n = it->second;
  }
  const tbn::MemorySize s = tbn::model_size_bytes(n, 2, alpha_overhead);
  std::cout << "params " << n << '\n'
            << "two_bit_bytes " << s.two_bit_bytes << '\n'
            << "double_bytes " << s.double_bytes << '\n'
            << "two_bit_mb " << fmt("%.6f", static_cast<double>(s.two_bit_bytes) / 1e6) << '\n'
            << "double_mb " << fmt("%.6f", static_cast<double>(s.double_bytes) / 1e6) << '\n'
            << "ratio " << fmt("%.6f", s.ratio) << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- bench

std::vector<std::size_t> parse_extents(const std::string& text, std::size_t count,
                                       const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || v == 0 || v > 4096)
      throw UsageError(std::string(flag) + ": bad extent '" + part + "'");
    out.push_back(v);
  }
  if (out.size() != count)
    throw UsageError(std::string(flag) + " expects " + std::to_string(count) +
                     " comma-separated extents");
  return out;
}

struct BenchOptions {
  std::string shape;
  std::string filter;
  std::size_t filters = 1;
  std::size_t iters = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchOptions& o) {
  const auto in = parse_extents(o.shape, 3, "--shape");
  const auto fk = parse_extents(o.filter, 2, "--filter");
  if (o.iters == 0) throw UsageError("--iters must be positive");
  if (o.filters == 0) throw UsageError("--filters must be positive");
  if (o.stride == 0) throw UsageError("--stride must be positive");
  if (in[1] + 2 * o.pad < fk[0] || in[2] + 2 * o.pad < fk[1])
    throw UsageError("filter larger than padded input");
  const tbn::ConvSpec spec{o.stride, o.pad};

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> xv(in[0] * in[1] * in[2]);
  for (float& v : xv) v = u(rng);
  const tbn::Tensor x(tbn::Shape{in[0], in[1], in[2]}, std::move(xv));
  std::vector<tbn::TwoBitFilter> filters;
  std::vector<tbn::Tensor> approx;
  for (std::size_t k = 0; k < o.filters; ++k) {
    std::vector<float> wv(in[0] * fk[0] * fk[1]);
    for (float& v : wv) v = 2.0f * u(rng);
    filters.push_back(tbn::quantize_filter(tbn::Tensor(tbn::Shape{in[0], fk[0], fk[1]},
                                                       std::move(wv))).first);
    approx.push_back(filters.back().approximate());
  }

  std::size_t multiplies = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < filters.size(); ++k) {
    auto [out, m] = tbn::conv_mfree_counted(x, filters[k], spec);
    multiplies += m;
    worst = std::max(worst, rel_dev(out.values(), tbn::conv_reference(x, approx[k], spec).values()));
  }
  const std::size_t outputs = filters.size() * tbn::conv_output_extent(in[1], fk[0], spec) *
                              tbn::conv_output_extent(in[2], fk[1], spec);

  using clock = std::chrono::steady_clock;
  float sink = 0.0f;
  auto t0 = clock::now();
  for (std::size_t i = 0; i < o.iters; ++i)
    sink += tbn::conv_layer_forward(x, filters, std::nullopt, spec)[0];
  auto t1 = clock::now();
  for (std::size_t i = 0; i < o.iters; ++i)
    sink += tbn::conv_layer_reference(x, approx, std::nullopt, spec)[0];
  auto t2 = clock::now();
  const double denom = static_cast<double>(o.iters * outputs);
  auto ns = [&](auto d) {
    return std::chrono::duration<double, std::nano>(d).count() / denom;
  };

  std::cout << "output_elements " << outputs << '\n'
            << "mfree_multiplies " << multiplies << '\n'
            << "mfree_ns_per_output " << fmt("%.3f", ns(t1 - t0)) << '\n'
            << "reference_ns_per_output " << fmt("%.3f", ns(t2 - t1)) << '\n'
            << "max_rel_dev " << fmt("%.3e", worst) << '\n'
            << "checksum " << fmt("%.6g", sink) << '\n';
  if (multiplies != outputs || !(worst <= kOracleTolerance)) {
    std::cerr << "tbn: benchmark verification failed\n";
    return kExitVerify;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-bit network quantization, inference and training"};
  app.require_subcommand(1);

  std::string q_input, q_meta, q_output, q_report;
  auto* quantize = app.add_subcommand("quantize", "Quantize TBNF float filters into a TBN1 model");
  quantize->add_option("--input", q_input, "TBNF weights (one record per layer)")->required();
  quantize->add_option("--layer-meta", q_meta, "Layer meta: in_c out_c fh fw stride pad [bias]")
      ->required();
  quantize->add_option("--output", q_output, "TBN1 model to write")->required();
  quantize->add_option("--report", q_report, "Per-filter quantization report");

  std::string i_model, i_input;
  bool i_oracle = false;
  auto* infer = app.add_subcommand("infer", "Run a TBN1 model on a TBNF input");
  infer->add_option("--model", i_model)->required();
  infer->add_option("--input", i_input)->required();
  infer->add_flag("--oracle", i_oracle, "Cross-check against full-precision convolution");

  DemoOptions demo;
  auto* train = app.add_subcommand("train-demo", "Train the toy CNN and export a TBN1 model");
  train->add_option("--epochs", demo.epochs)->capture_default_str();
  train->add_option("--seed", demo.seed)->capture_default_str();
  train->add_option("--mnist-dir", demo.mnist_dir, "Directory with MNIST IDX training files");
  train->add_option("--mnist-limit", demo.mnist_limit, "Use at most this many IDX items");
  train->add_option("--samples", demo.samples, "Synthetic dataset size")->capture_default_str();
  train->add_option("--classes", demo.classes, "Synthetic class count")->capture_default_str();
  train->add_flag("--no-clip", demo.no_clip, "Do not clamp shadow weights");
  train->add_flag("--keep-first-last-float", demo.keep_first_last_float,
                  "Train first and last layers in full precision");
  train->add_flag("--baseline", demo.baseline, "Also train the full-precision baseline");
  train->add_option("--out", demo.out, "TBN1 model to write")->required();
  train->add_option("--log", demo.log, "Write the training log here as well");

  std::optional<std::uint64_t> m_params;
  std::string m_preset;
  std::uint64_t m_overhead = 0;
  auto* memsize = app.add_subcommand("memsize", "Two-bit vs double-precision weight memory");
  memsize->add_option("--params", m_params);
  memsize->add_option("--preset", m_preset, "alexnet | resnet18 | vgg19");
  memsize->add_option("--alpha-overhead", m_overhead, "Extra bytes for scales and headers");

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time multiplication-free vs reference conv");
  bench_cmd->add_option("--shape", bench.shape, "c,h,w")->required();
  bench_cmd->add_option("--filter", bench.filter, "fh,fw")->required();
  bench_cmd->add_option("--filters", bench.filters)->required();
  bench_cmd->add_option("--iters", bench.iters)->required();
  bench_cmd->add_option("--stride", bench.stride)->capture_default_str();
  bench_cmd->add_option("--pad", bench.pad)->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*quantize) return cmd_quantize(q_input, q_meta, q_output, q_report);
    if (*infer) return cmd_infer(i_model, i_input, i_oracle);
    if (*train) {
      if (demo.samples == 0 || demo.classes == 0)
        throw UsageError("--samples and --classes must be positive");
      return cmd_train_demo(demo);
    }
    if (*memsize) return cmd_memsize(m_params, m_preset, m_overhead);
    if (*bench_cmd) return cmd_bench(bench);
  } catch (const UsageError& e) {
    std::cerr << "tbn: " << e.what() << '\n';
    return kExitUsage;
  } catch (const tbn::Error& e) {
    std::cerr << "tbn: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
