#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fd_oracle.hpp"
#include "shiftnas/error.hpp"
#include "shiftnas/supernet.hpp"

using namespace shiftnas;
using namespace shiftnas::nn;
using shiftnas::testing::central_difference;
using shiftnas::testing::relative_error;
namespace fs = std::filesystem;

namespace {

SearchSpace tiny() { return default_space("tiny", {6, 8, 3}); }

Matrix random_input(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (auto& v : m.data()) v = rng.uniform(-1, 1);
  return m;
}

void perturb(std::vector<DenseParams>& layers, Rng& rng) {
  for (auto& l : layers) {
    for (auto& v : l.weight.data()) v += rng.uniform(-1, 1);
    for (auto& v : l.bias) v += rng.uniform(-1, 1);
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("shiftnas_test_" + name); }

// Straight-line recomputation of one path, sharing no code with forward_path.
Matrix reference_forward(const Supernet& net, const ArchGenome& g, const Matrix& x) {
  auto dense = [](const Matrix& in, const DenseParams& p, Activation act) {
    Matrix out(in.rows(), p.weight.cols());
    for (std::size_t i = 0; i < in.rows(); ++i)
      for (std::size_t j = 0; j < p.weight.cols(); ++j) {
        double s = p.bias[j];
        for (std::size_t k = 0; k < in.cols(); ++k) s += in(i, k) * p.weight(k, j);
        if (act == Activation::relu) s = s > 0 ? s : 0;
        if (act == Activation::tanh) s = std::tanh(s);
        out(i, j) = s;
      }
    return out;
  };
  Matrix h = dense(x, net.stem, Activation::none);
  for (std::size_t b = 0; b < net.space.num_blocks(); ++b) {
    const auto& choice = net.space.blocks[b][g[b]];
    if (choice.is_identity()) continue;
    Matrix y = h;
    for (std::size_t l = 0; l < choice.layers.size(); ++l)
      y = dense(y, net.blocks[b][g[b]][l], choice.layers[l].activation);
    if (net.space.block_skip)
      for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += h.data()[i];
    h = y;
  }
  return dense(h, net.head, Activation::none);
}

}  // namespace

TEST_CASE("init_supernet determinism, zero biases and glorot bound") {
  const auto s = tiny();
  const auto a = init_supernet(s, 42), b = init_supernet(s, 42);
  CHECK(a.checksum() == b.checksum());
  CHECK(init_supernet(s, 43).checksum() != a.checksum());
  auto check = [](const LayerSpec& spec, const DenseParams& p) {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
    for (double w : p.weight.data()) CHECK(std::abs(w) <= bound);
    for (double v : p.bias) CHECK(v == 0.0);
  };
  check(s.stem_spec(), a.stem);
  check(s.head_spec(), a.head);
  for (std::size_t bl = 0; bl < s.num_blocks(); ++bl)
    for (std::size_t c = 0; c < s.num_choices(bl); ++c) {
      const auto& layers = s.blocks[bl][c].layers;
      REQUIRE(a.blocks[bl][c].size() == layers.size());
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].kind == LayerKind::identity) {
          CHECK(a.blocks[bl][c][l].empty());
          continue;
        }
        CHECK(a.blocks[bl][c][l].weight.rows() == layers[l].in_dim);
        CHECK(a.blocks[bl][c][l].weight.cols() == layers[l].out_dim);
        check(layers[l], a.blocks[bl][c][l]);
      }
    }
}

TEST_CASE("forward_path matches the straight-line oracle") {
  Rng rng(9);
  for (bool skip : {true, false}) {
    auto s = tiny();
    s.block_skip = skip;
    const auto net = init_supernet(s, 5);
    for (int t = 0; t < 20; ++t) {
      const auto g = sample_uniform(s, rng);
      const auto x = random_input(4, 6, rng);
      const auto got = forward_path(net, g, x).logits;
      const auto want = reference_forward(net, g, x);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("all-identity genome is head(stem(x))") {
  const auto s = tiny();
  const auto net = init_supernet(s, 1);
  Rng rng(2);
  const auto x = random_input(3, 6, rng);
  const auto stem = layer_forward(s.stem_spec(), net.stem, x).output;
  const auto logits = layer_forward(s.head_spec(), net.head, stem).output;
  CHECK(forward_path(net, ArchGenome{{0, 0, 0, 0}}, x).logits == logits);
}

TEST_CASE("path selectivity under perturbation of non-selected choices") {
  const auto s = tiny();
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const auto net = init_supernet(s, 100 + t);
    const auto g = sample_uniform(s, rng);
    const auto x = random_input(5, 6, rng);
    std::vector<std::size_t> labels(5);
    for (auto& l : labels) l = rng.index(3);
    auto other = net;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        if (c != g[b]) perturb(other.choice_params(b, c), rng);
    const auto a = path_loss_and_grads(net, g, x, labels);
    const auto o = path_loss_and_grads(other, g, x, labels);
    CHECK(forward_path(net, g, x).logits == forward_path(other, g, x).logits);
    CHECK(a.loss == o.loss);
    CHECK(a.grads.stem == o.grads.stem);
    CHECK(a.grads.head == o.grads.head);
    REQUIRE(a.grads.choices.size() == o.grads.choices.size());
    for (std::size_t i = 0; i < a.grads.choices.size(); ++i) CHECK(a.grads.choices[i].layers == o.grads.choices[i].layers);
  }
}

TEST_CASE("backward_path entries only for selected parameterized choices") {
  const auto s = tiny();
  const auto net = init_supernet(s, 3);
  Rng rng(4);
  const ArchGenome g{{0, 1, 2, 0}};
  const auto x = random_input(2, 6, rng);
  std::vector<std::size_t> labels{0, 2};
  const auto r = path_loss_and_grads(net, g, x, labels);
  CHECK(r.grads.choices.size() == 2);
  CHECK(r.grads.find(1, 1) != nullptr);
  CHECK(r.grads.find(2, 2) != nullptr);
  CHECK(r.grads.find(0, 0) == nullptr);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t c = 0; c < 4; ++c)
      if (c != g[b]) CHECK(r.grads.find(b, c) == nullptr);
}

TEST_CASE("end-to-end path gradients match finite differences") {
  for (bool skip : {true, false}) {
    auto s = tiny();
    s.block_skip = skip;
    Rng rng(skip ? 77 : 78);
    double worst = 0;
    for (int t = 0; t < 10; ++t) {
      auto net = init_supernet(s, 500 + t);
      // zero biases put relu inputs exactly on the kink behind a dead unit
      net.for_each_param([&](DenseParams& p) {
        for (auto& v : p.bias) v = rng.uniform(-0.5, 0.5);
      });
      const auto g = sample_uniform(s, rng);
      const auto x = random_input(3, 6, rng);
      std::vector<std::size_t> labels{rng.index(3), rng.index(3), rng.index(3)};
      const auto r = path_loss_and_grads(net, g, x, labels);
      auto loss = [&] { return path_loss_and_grads(net, g, x, labels).loss; };
      auto compare = [&](DenseParams& p, const DenseParams& grad) {
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
          const double fd = central_difference(loss, p.weight.data()[i]);
          worst = std::max(worst, relative_error(grad.weight.data()[i], fd));
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
          const double fd = central_difference(loss, p.bias[i]);
          worst = std::max(worst, relative_error(grad.bias[i], fd));
        }
      };
      compare(net.stem, r.grads.stem);
      compare(net.head, r.grads.head);
      for (const auto& cg : r.grads.choices)
        for (std::size_t l = 0; l < cg.layers.size(); ++l)
          if (!cg.layers[l].empty()) compare(net.choice_params(cg.block, cg.choice)[l], cg.layers[l]);
    }
    INFO("block_skip " << skip);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("apply_update semantics") {
  const auto s = tiny();
  Rng rng(8);
  const auto x = random_input(4, 6, rng);
  std::vector<std::size_t> labels{0, 1, 2, 0};
  const ArchGenome g1{{1, 1, 0, 3}}, g2{{1, 2, 0, 0}};

  SUBCASE("empty aggregate only bumps the counter") {
    auto net = init_supernet(s, 1);
    const auto sum = net.checksum();
    apply_update(net, GradAggregate{}, 0.1, 1);
    CHECK(net.checksum() == sum);
    CHECK(net.train_steps == 1);
  }
  SUBCASE("single contribution equals sgd_step on the path") {
    auto net = init_supernet(s, 1);
    auto manual = net;
    const auto r = path_loss_and_grads(net, g1, x, labels);
    GradAggregate agg;
    agg.add(r.grads);
    apply_update(net, agg, 0.1, 1);
    sgd_step(manual.stem, r.grads.stem, 0.1);
    sgd_step(manual.head, r.grads.head, 0.1);
    for (const auto& cg : r.grads.choices)
      for (std::size_t l = 0; l < cg.layers.size(); ++l)
        if (!cg.layers[l].empty()) sgd_step(manual.choice_params(cg.block, cg.choice)[l], cg.layers[l], 0.1);
    manual.train_steps = net.train_steps;
    CHECK(net.checksum() == manual.checksum());
  }
  SUBCASE("linearity of the aggregate") {
    auto a = init_supernet(s, 2);
    auto b = a;
    const auto r1 = path_loss_and_grads(a, g1, x, labels);
    const auto r2 = path_loss_and_grads(a, g2, x, labels);
    GradAggregate two;
    two.add(r1.grads);
    two.add(r2.grads);
    apply_update(a, two, 0.2, 2);

    // same sum presented as a single contribution
    PathGrads summed = r1.grads;
    accumulate(summed.stem, r2.grads.stem);
    accumulate(summed.head, r2.grads.head);
    for (const auto& cg : r2.grads.choices) {
      bool merged = false;
      for (auto& mine : summed.choices)
        if (mine.block == cg.block && mine.choice == cg.choice) {
          for (std::size_t l = 0; l < cg.layers.size(); ++l)
            if (!cg.layers[l].empty()) accumulate(mine.layers[l], cg.layers[l]);
          merged = true;
        }
      if (!merged) summed.choices.push_back(cg);
    }
    GradAggregate one;
    one.add(summed);
    apply_update(b, one, 0.2, 2);
    std::vector<double> pa, pb;
    a.for_each_param([&](const DenseParams& p) { pa.insert(pa.end(), p.weight.data().begin(), p.weight.data().end()); });
    b.for_each_param([&](const DenseParams& p) { pb.insert(pb.end(), p.weight.data().begin(), p.weight.data().end()); });
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-13));
  }
  SUBCASE("touches exactly the contributed paths") {
    auto net = init_supernet(s, 3);
    const auto before = net;
    GradAggregate agg;
    agg.add(path_loss_and_grads(net, g1, x, labels).grads);
    apply_update(net, agg, 0.1, 1);
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool touched = c == g1[b] && !s.blocks[b][c].is_identity();
        CHECK((net.choice_params(b, c) != before.choice_params(b, c)) == touched);
      }
  }
  SUBCASE("mask and normalizer") {
    auto net = init_supernet(s, 4);
    const auto before = net;
    GradAggregate agg;
    agg.add(path_loss_and_grads(net, g1, x, labels).grads);
    apply_update(net, agg, 0.1, 1, UpdateMask{false, false, true});
    CHECK(net.block_checksum() == before.block_checksum());
    CHECK(net.stem == before.stem);
    CHECK(net.head != before.head);
    CHECK_THROWS_AS(apply_update(net, agg, 0.1, 0), InvalidArgument);
  }
}

TEST_CASE("weight sharing: an update through one genome is seen by another") {
  const auto s = tiny();
  auto net = init_supernet(s, 12);
  Rng rng(13);
  const auto x = random_input(4, 6, rng);
  std::vector<std::size_t> labels{0, 1, 2, 1};
  const ArchGenome trained{{1, 0, 0, 0}}, observer{{1, 3, 3, 3}};
  const auto before = forward_path(net, observer, x).logits;
  GradAggregate agg;
  agg.add(path_loss_and_grads(net, trained, x, labels).grads);
  apply_update(net, agg, 0.5, 1, UpdateMask{false, true, false});
  CHECK(forward_path(net, observer, x).logits != before);
  const ArchGenome disjoint{{2, 3, 3, 3}};
  auto fresh = init_supernet(s, 12);
  CHECK(forward_path(net, disjoint, x).logits == forward_path(fresh, disjoint, x).logits);
}

TEST_CASE("reset_head") {
  const auto s = tiny();
  const auto net = init_supernet(s, 21);
  const auto same = reset_head(net, 3, 6, 99);
  CHECK(same.block_checksum() == net.block_checksum());
  CHECK(same.stem == net.stem);
  CHECK(same.head != net.head);
  CHECK_FALSE(same.stem_reinitialized);

  const auto more = reset_head(net, 7, 99);
  CHECK(more.head.weight.rows() == 8);
  CHECK(more.head.weight.cols() == 7);
  CHECK(more.space.num_classes == 7);
  CHECK(more.block_checksum() == net.block_checksum());

  const auto wider = reset_head(net, 3, 10, 99);
  CHECK(wider.stem_reinitialized);
  CHECK(wider.stem.weight.rows() == 10);
  CHECK(wider.block_checksum() == net.block_checksum());
}

TEST_CASE("checkpoint round trip") {
  const auto s = tiny();
  auto net = init_supernet(s, 55);
  net.train_steps = 17;
  net.provenance["config_hash"] = "abc";
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_checkpoint(net, p1);
  const auto loaded = load_checkpoint(p1);
  CHECK(loaded.checksum() == net.checksum());
  CHECK(loaded.train_steps == 17);
  CHECK(loaded.provenance == net.provenance);
  CHECK(loaded.space == net.space);
  std::vector<double> a, b;
  net.for_each_param([&](const DenseParams& p) { a.insert(a.end(), p.weight.data().begin(), p.weight.data().end()); });
  loaded.for_each_param([&](const DenseParams& p) { b.insert(b.end(), p.weight.data().begin(), p.weight.data().end()); });
  CHECK(a == b);
  save_checkpoint(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));

  SUBCASE("header is standalone json") {
    std::ifstream is(p1);
    std::string line;
    std::getline(is, line);
    const auto header = nlohmann::json::parse(line);
    CHECK(header.at("format") == kCheckpointFormat);
    CHECK(header.at("param_count") == net.parameter_count());
  }
  SUBCASE("mismatched space") {
    auto other = default_space("tiny", {6, 16, 3});
    try {
      load_checkpoint(p1, other);
      FAIL("expected a space mismatch");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == "space_mismatch");
    }
  }
  SUBCASE("corruption is detected") {
    std::string bytes = slurp(p1);
    bytes[bytes.size() - 3] ^= 0x40;
    const auto bad = temp_path("bad.ckpt");
    std::ofstream(bad, std::ios::binary) << bytes;
    try {
      load_checkpoint(bad);
      FAIL("expected checksum mismatch");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == "checksum_mismatch");
    }
    std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() - 8);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  }
  SUBCASE("version") {
    std::string bytes = slurp(p1);
    const auto pos = bytes.find("shiftnas-ckpt-v1");
    bytes.replace(pos, 16, "shiftnas-ckpt-v9");
    const auto bad = temp_path("ver.ckpt");
    std::ofstream(bad, std::ios::binary) << bytes;
    try {
      load_checkpoint(bad);
      FAIL("expected version mismatch");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == "version_mismatch");
    }
  }
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), Error);
}
