#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "tbn/bytes.hpp"
#include "tbn/conv.hpp"
#include "tbn/packed.hpp"
#include "tbn/tensor_io.hpp"

using namespace tbn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("tbn_cli_") + info->name() + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  RunResult run(const std::string& args) const {
    const std::string cmd = std::string("\"") + TBN_CLI_PATH + "\" " + args + " 2>" +
                            path("stderr.txt");
    RunResult r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
  }

  std::string stderr_text() const { return read_text(path("stderr.txt")); }

  static std::string read_text(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
  }

  void write_tensors(const std::string& name, std::initializer_list<Tensor> tensors) const {
    std::vector<std::uint8_t> bytes;
    for (const Tensor& t : tensors) append_tbnf(bytes, t);
    write_file_atomic(path(name), bytes);
  }

  fs::path dir_;
};

std::string field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string token, value;
  while (in >> token)
    if (token == key && in >> value) return value;
  return {};
}

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("memsize --params 4 --bogus").code, 1);
  EXPECT_EQ(run("memsize").code, 1);
  EXPECT_EQ(run("memsize --params 4 --preset alexnet").code, 1);
  EXPECT_EQ(run("memsize --params -3").code, 1);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("quantize --help").code, 0);
}

TEST_F(CliTest, MemsizeAlexnet) {
  const RunResult r = run("memsize --preset alexnet");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(field(r.out, "params"), "61000000");
  EXPECT_EQ(field(r.out, "two_bit_bytes"), "15250000");
  EXPECT_EQ(field(r.out, "double_bytes"), "488000000");
  EXPECT_EQ(field(r.out, "ratio"), "32.000000");
}

TEST_F(CliTest, MemsizeSmallCases) {
  RunResult r = run("memsize --params 0");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(field(r.out, "ratio"), "0.000000");
  r = run("memsize --params 4");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(field(r.out, "two_bit_bytes"), "1");
  EXPECT_EQ(field(r.out, "double_bytes"), "32");
  r = run("memsize --params 4 --alpha-overhead 4");
  EXPECT_EQ(field(r.out, "two_bit_bytes"), "5");
  EXPECT_EQ(run("memsize --preset lenet").code, 1);
}

TEST_F(CliTest, QuantizeReport) {
  write_tensors("w.tbnf", {Tensor(Shape{1, 1, 2}, {0.5f, 1.5f})});
  write_text("meta.txt", "# one 1x1x2 filter\n1 1 1 2 1 0\n");
  const RunResult r = run("quantize --input " + path("w.tbnf") + " --layer-meta " +
                          path("meta.txt") + " --output " + path("m.tbn") + " --report " +
                          path("r.txt"));
  ASSERT_EQ(r.code, 0) << stderr_text();
  EXPECT_EQ(read_text(path("r.txt")), "filter=0:0 alpha=0.7 J=0.05 b1=1 b2=1 degenerate=0\n");
  const TbnModel model = load_model_file(path("m.tbn"));
  ASSERT_EQ(model.layers.size(), 1u);
  EXPECT_FLOAT_EQ(model.layers[0].filters[0].alpha, 0.7f);
}

TEST_F(CliTest, QuantizeWithBias) {
  write_tensors("w.tbnf", {Tensor(Shape{2, 1, 1, 1}, {0.3f, -2.0f}), Tensor(Shape{2}, {0.5f, -1.f})});
  write_text("meta.txt", "1 2 1 1 1 0 1\n");
  ASSERT_EQ(run("quantize --input " + path("w.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("m.tbn")).code, 0) << stderr_text();
  const TbnModel model = load_model_file(path("m.tbn"));
  ASSERT_TRUE(model.layers[0].bias.has_value());
  EXPECT_EQ(*model.layers[0].bias, (std::vector<float>{0.5f, -1.f}));
}

TEST_F(CliTest, QuantizeEmptyLayerList) {
  write_file_atomic(path("none.tbnf"), std::vector<std::uint8_t>{});
  write_text("meta.txt", "# nothing\n\n");
  ASSERT_EQ(run("quantize --input " + path("none.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("e.tbn")).code, 0) << stderr_text();
  EXPECT_EQ(fs::file_size(path("e.tbn")), 8u);
  EXPECT_TRUE(load_model_file(path("e.tbn")).layers.empty());
}

TEST_F(CliTest, QuantizeTruncatedInput) {
  auto bytes = encode_tbnf(Tensor(Shape{1, 1, 2}, {0.5f, 1.5f}));
  bytes.resize(bytes.size() - 3);
  write_file_atomic(path("t.tbnf"), bytes);
  write_text("meta.txt", "1 1 1 2 1 0\n");
  EXPECT_EQ(run("quantize --input " + path("t.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("t.tbn")).code, 2);
  EXPECT_NE(stderr_text().find("offset"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("t.tbn")));
}

TEST_F(CliTest, QuantizeMalformedMeta) {
  write_tensors("w.tbnf", {Tensor(Shape{1, 1, 2}, {0.5f, 1.5f})});
  const std::string args = " --input " + path("w.tbnf") + " --layer-meta " + path("meta.txt") +
                           " --output " + path("m.tbn");
  write_text("meta.txt", "1 1 1 2\n");
  EXPECT_EQ(run("quantize" + args).code, 2);
  write_text("meta.txt", "1 1 1 3 1 0\n");
  EXPECT_EQ(run("quantize" + args).code, 2);
  write_text("meta.txt", "1 1 1 2 1 0\n1 1 1 1 1 0\n");
  EXPECT_EQ(run("quantize" + args).code, 2);
  EXPECT_FALSE(fs::exists(path("m.tbn")));
}

TEST_F(CliTest, QuantizeDegenerateFilterStillWrites) {
  write_tensors("w.tbnf", {Tensor(Shape{2, 1, 1, 2}, {0.f, 0.f, 1.f, 1.f})});
  write_text("meta.txt", "1 2 1 2 1 0\n");
  EXPECT_EQ(run("quantize --input " + path("w.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("m.tbn") + " --report " + path("r.txt")).code, 3);
  EXPECT_NO_THROW(load_model_file(path("m.tbn")));
  const std::string report = read_text(path("r.txt"));
  EXPECT_NE(report.find("filter=0:0 alpha=1e-12"), std::string::npos);
  EXPECT_NE(report.find("degenerate=1"), std::string::npos);
}

TEST_F(CliTest, InferIdentityModel) {
  write_tensors("w.tbnf", {Tensor(Shape{1, 1, 1, 1}, {1.0f})});
  write_text("meta.txt", "1 1 1 1 1 0\n");
  ASSERT_EQ(run("quantize --input " + path("w.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("id.tbn")).code, 0);
  write_tensors("x.tbnf", {Tensor(Shape{1, 2, 2}, {1.f, -2.f, 3.5f, 0.25f})});
  const RunResult r = run("infer --model " + path("id.tbn") + " --input " + path("x.tbnf"));
  ASSERT_EQ(r.code, 0) << stderr_text();
  EXPECT_EQ(r.out, "item 0 argmax 2 scores 1 -2 3.5 0.25\n");
}

TEST_F(CliTest, InferOracleOnRandomModel) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(-2.f, 2.f);
  auto random_layer = [&](LayerMeta meta) {
    std::vector<TwoBitFilter> filters;
    for (std::uint32_t k = 0; k < meta.out_channels; ++k) {
      std::vector<float> w(meta.filter_elements());
      for (float& v : w) v = u(rng);
      filters.push_back(
          quantize_filter(Tensor(Shape{meta.in_channels, meta.filter_h, meta.filter_w}, std::move(w)))
              .first);
    }
    std::vector<float> bias(meta.out_channels);
    for (float& v : bias) v = u(rng);
    return make_layer(meta, filters, bias);
  };
  TbnModel model;
  model.layers.push_back(random_layer({2, 4, 3, 3, 1, 1}));
  model.layers.push_back(random_layer({4, 3, 3, 3, 2, 0}));
  save_model_file(model, path("m.tbn"));
  std::vector<float> x(2 * 2 * 9 * 9);
  for (float& v : x) v = u(rng);
  write_tensors("x.tbnf", {Tensor(Shape{2, 2, 9, 9}, std::move(x))});
  const RunResult r = run("infer --oracle --model " + path("m.tbn") + " --input " + path("x.tbnf"));
  ASSERT_EQ(r.code, 0) << stderr_text();
  EXPECT_NE(r.out.find("item 1 argmax"), std::string::npos);
  EXPECT_LE(std::stod(field(r.out, "max_rel_dev")), 1e-4);
}

TEST_F(CliTest, InferErrors) {
  write_tensors("w.tbnf", {Tensor(Shape{1, 1, 1, 1}, {1.0f})});
  write_text("meta.txt", "1 1 1 1 1 0\n");
  ASSERT_EQ(run("quantize --input " + path("w.tbnf") + " --layer-meta " + path("meta.txt") +
                " --output " + path("id.tbn")).code, 0);
  write_tensors("x.tbnf", {Tensor(Shape{2, 2, 2}, std::vector<float>(8, 1.f))});
  EXPECT_EQ(run("infer --model " + path("id.tbn") + " --input " + path("x.tbnf")).code, 2);
  write_tensors("flat.tbnf", {Tensor(Shape{4}, {1.f, 2.f, 3.f, 4.f})});
  EXPECT_EQ(run("infer --model " + path("id.tbn") + " --input " + path("flat.tbnf")).code, 2);

  auto bytes = read_file_bytes(path("id.tbn"));
  bytes[0] = 'X';
  write_file_atomic(path("bad.tbn"), bytes);
  write_tensors("ok.tbnf", {Tensor(Shape{1, 1, 1}, {1.f})});
  EXPECT_EQ(run("infer --model " + path("bad.tbn") + " --input " + path("ok.tbnf")).code, 2);
  EXPECT_EQ(run("infer --model " + path("missing.tbn") + " --input " + path("ok.tbnf")).code, 2);
}

TEST_F(CliTest, TrainDemoZeroEpochsExportsValidModel) {
  const RunResult r = run("train-demo --epochs 0 --seed 3 --out " + path("m.tbn"));
  ASSERT_EQ(r.code, 0) << stderr_text();
  const TbnModel model = load_model_file(path("m.tbn"));
  EXPECT_EQ(model.layers.size(), 3u);
  EXPECT_NE(r.out.find("final train_acc="), std::string::npos);
}

TEST_F(CliTest, TrainDemoDeterministic) {
  const std::string common = "train-demo --epochs 1 --seed 9 --samples 128 ";
  ASSERT_EQ(run(common + "--out " + path("a.tbn") + " --log " + path("a.log")).code, 0);
  ASSERT_EQ(run(common + "--out " + path("b.tbn") + " --log " + path("b.log")).code, 0);
  EXPECT_EQ(read_text(path("a.log")), read_text(path("b.log")));
  EXPECT_EQ(read_file_bytes(path("a.tbn")), read_file_bytes(path("b.tbn")));
  EXPECT_NE(read_text(path("a.log")).find("epoch=1 iter=4 lr=0.1"), std::string::npos);
}

TEST_F(CliTest, TrainDemoBadIdx) {
  fs::create_directories(path("mnist"));
  write_file_atomic(path("mnist/train-images-idx3-ubyte"), std::vector<std::uint8_t>{0, 0, 9, 9, 0, 0, 0, 0});
  write_file_atomic(path("mnist/train-labels-idx1-ubyte"), std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 0});
  EXPECT_EQ(run("train-demo --epochs 1 --mnist-dir " + path("mnist") + " --out " + path("m.tbn"))
                .code,
            2);
  EXPECT_FALSE(fs::exists(path("m.tbn")));
  EXPECT_EQ(run("train-demo --epochs 1 --mnist-dir " + path("nowhere") + " --out " + path("m.tbn"))
                .code,
            2);
}

TEST_F(CliTest, BenchReportsMultiplyCount) {
  const RunResult r = run("bench --shape 3,10,10 --filter 3,3 --filters 4 --iters 2 --pad 1");
  ASSERT_EQ(r.code, 0) << stderr_text();
  EXPECT_EQ(field(r.out, "output_elements"), "400");
  EXPECT_EQ(field(r.out, "mfree_multiplies"), "400");
  EXPECT_LE(std::stod(field(r.out, "max_rel_dev")), 1e-4);
  EXPECT_FALSE(field(r.out, "mfree_ns_per_output").empty());
  EXPECT_FALSE(field(r.out, "reference_ns_per_output").empty());
}

TEST_F(CliTest, BenchUsageErrors) {
  EXPECT_EQ(run("bench --shape 3,10,10 --filter 3,3 --filters 4 --iters 0").code, 1);
  EXPECT_EQ(run("bench --shape 3,10 --filter 3,3 --filters 4 --iters 1").code, 1);
  EXPECT_EQ(run("bench --shape 3,0,10 --filter 3,3 --filters 4 --iters 1").code, 1);
  EXPECT_EQ(run("bench --shape 3,2,2 --filter 3,3 --filters 4 --iters 1").code, 1);
  EXPECT_EQ(run("bench --shape a,b,c --filter 3,3 --filters 4 --iters 1").code, 1);
}
