#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "robattr/data.hpp"
#include "robattr/nn.hpp"
#include "robattr/optim.hpp"
#include "robattr/train.hpp"

using namespace robattr;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// trains a small classifier and reports train accuracy
double train_accuracy(const Dataset& ds, const std::vector<int64_t>& dims,
                      int steps, double lr) {
  Network net = Network::mlp(dims, Activation::relu, 7);
  AdamState state;
  AdamConfig cfg{lr, 0.9, 0.999, 1e-8};
  std::vector<int64_t> all(static_cast<size_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) all[static_cast<size_t>(i)] = i;
  Batch batch = ds.batch(all);
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    Network::Bound bound = net.bind(tape, true);
    Node logits = net.forward(tape, tape.constant(batch.x), bound);
    Node loss = loss_mean(tape, logits, batch.y, LossKind::cross_entropy_nll);
    std::vector<Node> grads = tape.gradient(loss, bound.params);
    std::vector<Tensor> gv;
    for (Node g : grads) gv.push_back(g.value());
    adam_step(net.mutable_params(), gv, state, cfg);
  }
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  Node logits = net.forward(tape, tape.constant(batch.x), bound);
  std::vector<int> pred = predict_classes(logits.value());
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.y[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("idx round-trip is bitwise for byte-grid pixels") {
  Dataset ds;
  ds.name = "synthetic";
  ds.input_shape = {9};
  ds.num_classes = 10;
  Rng rng(5);
  for (int i = 0; i < 3; ++i) {
    Sample s;
    s.x = Tensor(Shape{9});
    for (int64_t p = 0; p < 9; ++p)
      s.x[p] = static_cast<double>(rng.uniform_int(256)) / 255.0;
    s.y = static_cast<int>(rng.uniform_int(10));
    ds.samples.push_back(std::move(s));
  }
  const std::string img = tmp_path("robattr_rt_images");
  const std::string lab = tmp_path("robattr_rt_labels");
  write_idx(img, lab, ds, 3, 3);
  Dataset back = load_idx(img, lab);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.samples[i].y == ds.samples[i].y);
    for (int64_t p = 0; p < 9; ++p)
      CHECK(back.samples[i].x[p] == ds.samples[i].x[p]);
  }
  std::remove(img.c_str());
  std::remove(lab.c_str());
}

TEST_CASE("idx error paths are specific") {
  const std::string img = tmp_path("robattr_bad_images");
  const std::string lab = tmp_path("robattr_bad_labels");
  {
    std::ofstream os(img, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    os.write(reinterpret_cast<const char*>(hdr), 16);
    os.put('\x01');  // 1 byte instead of 8
  }
  {
    std::ofstream os(lab, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 1, 0, 0, 0, 2};
    os.write(reinterpret_cast<const char*>(hdr), 8);
    os.put('\x00');
    os.put('\x01');
  }
  CHECK_THROWS_WITH(load_idx(img, lab),
                    Catch::Matchers::ContainsSubstring("expected 8") &&
                        Catch::Matchers::ContainsSubstring("got 1"));
  {
    std::ofstream os(img, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 9, 9, 0, 0, 0, 2};
    os.write(reinterpret_cast<const char*>(hdr), 8);
  }
  CHECK_THROWS_WITH(load_idx(img, lab),
                    Catch::Matchers::ContainsSubstring("magic"));
  CHECK_THROWS_AS(load_idx(tmp_path("robattr_missing"), lab), io_error);
  // count mismatch
  {
    std::ofstream os(img, std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2};
    os.write(reinterpret_cast<const char*>(hdr), 16);
    for (int i = 0; i < 4; ++i) os.put('\x00');
  }
  CHECK_THROWS_WITH(load_idx(img, lab),
                    Catch::Matchers::ContainsSubstring("1 images but 2 labels"));
  std::remove(img.c_str());
  std::remove(lab.c_str());
}

TEST_CASE("bundled mnist subset loads with the documented geometry") {
  const std::string dir = std::string(ROBATTR_SOURCE_DIR) + "/data/mnist/";
  Dataset train = load_idx(dir + "train-images-idx3-ubyte",
                           dir + "train-labels-idx1-ubyte", "mnist");
  Dataset test = load_idx(dir + "test-images-idx3-ubyte",
                          dir + "test-labels-idx1-ubyte", "mnist");
  CHECK(train.size() == 2000);
  CHECK(test.size() == 500);
  CHECK(train.dim() == 784);
  for (const Sample& s : test.samples) {
    CHECK(s.y >= 0);
    CHECK(s.y < 10);
    for (int64_t p = 0; p < 784; ++p) {
      CHECK(s.x[p] >= 0.0);
      CHECK(s.x[p] <= 1.0);
    }
  }
}

TEST_CASE("synthetic datasets are deterministic and in the unit box") {
  Dataset a = synth_two_gaussians(100, 1);
  Dataset b = synth_two_gaussians(100, 1);
  REQUIRE(a.size() == b.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[static_cast<size_t>(i)].y == b.samples[static_cast<size_t>(i)].y);
    for (int64_t p = 0; p < 2; ++p) {
      CHECK(a.samples[static_cast<size_t>(i)].x[p] ==
            b.samples[static_cast<size_t>(i)].x[p]);
      CHECK(a.samples[static_cast<size_t>(i)].x[p] >= 0.0);
      CHECK(a.samples[static_cast<size_t>(i)].x[p] <= 1.0);
    }
  }
  Dataset x = synth_xor_grid(100, 2);
  for (const Sample& s : x.samples) {
    CHECK(((s.x[0] > 0.5) != (s.x[1] > 0.5)) == (s.y == 1));
  }
}

TEST_CASE("two gaussians are linearly separable; xor is not") {
  Dataset gauss = synth_two_gaussians(100, 3);
  CHECK(train_accuracy(gauss, {2, 2}, 300, 0.05) == 1.0);

  Dataset xg = synth_xor_grid(200, 4);
  CHECK(train_accuracy(xg, {2, 2}, 800, 0.05) <= 0.76);
  CHECK(train_accuracy(xg, {2, 16, 2}, 2000, 0.02) == 1.0);
}
