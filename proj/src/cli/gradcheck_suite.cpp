#include "mmv/cli/gradcheck_suite.hpp"

#include <functional>
#include <random>

#include "mmv/diffcore/gradcheck.hpp"
#include "mmv/diffcore/ops.hpp"
#include "mmv/model/model.hpp"
#include "mmv/model/transformer.hpp"
#include "mmv/tabular/tabular.hpp"

namespace mmv::cli {

namespace {

using TD = diff::Tensor<double>;

TD random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(std::move(shape), std::move(v), requires_grad);
}

TD weighted_sum(const TD& y, const TD& w) { return diff::sum(diff::mul(y, w)); }

void perturb(model::ParamStore<double>& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto t : p.tensors())
    for (auto& x : t.mutable_data()) x += u(rng);
}

class Suite {
 public:
  explicit Suite(unsigned seed) : rng_(seed) {}

  void check(const std::string& name, std::vector<TD> inputs, const std::function<TD(std::vector<TD>&)>& f) {
    const auto r = diff::grad_check_report([&] { return f(inputs); }, inputs);
    out_.push_back({name, r.max_relative_error, r.coordinates});
  }
  TD rt(Shape s, bool grad = true) { return random_tensor(std::move(s), rng_, grad); }
  std::mt19937_64& rng() { return rng_; }
  std::vector<GradCheckEntry> take() { return std::move(out_); }

 private:
  std::mt19937_64 rng_;
  std::vector<GradCheckEntry> out_;
};

model::ModelConfig toy_model() {
  model::ModelConfig c;
  c.frame_size = 16;
  c.patch = 8;
  c.spatial_dim = 8;
  c.spatial_layers = 1;
  c.spatial_heads = 2;
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ehr_width = 3;
  c.interp_width = 2;
  c.max_frames = 2;
  c.seed = 3;
  return c;
}

model::ModelInput toy_input(const model::ModelConfig& c, std::size_t frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::normal_distribution<double> nd(0.0, 1.0);
  model::ModelInput in;
  auto& f = in.frames;
  f.frames = frames;
  const std::size_t plane = c.frame_size * c.frame_size;
  f.video.resize(frames * plane);
  for (auto& v : f.video) v = u(rng);
  f.zona.assign(frames * plane * c.zona_classes, 0.0f);
  for (std::size_t p = 0; p < frames * plane; ++p) f.zona[p * c.zona_classes + rng() % c.zona_classes] = 1.0f;
  f.blast.resize(frames * plane * 2);
  f.pronuc.resize(frames * plane * 2);
  for (auto& v : f.blast) v = static_cast<float>(rng() % 2);
  for (auto& v : f.pronuc) v = static_cast<float>(rng() % 2);
  for (std::size_t t = 0; t < frames; ++t) {
    f.frag.push_back(u(rng));
    f.stage.push_back(static_cast<std::uint8_t>(rng() % c.stage_classes));
  }
  for (std::size_t i = 0; i < c.ehr_width; ++i) in.ehr.push_back(nd(rng));
  for (std::size_t i = 0; i < c.interp_width; ++i) in.interp.push_back(nd(rng));
  return in;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(unsigned seed) {
  Suite s(seed);
  using V = std::vector<TD>&;

  {
    auto w = s.rt({3, 2}, false);
    s.check("matmul", {s.rt({3, 4}), s.rt({4, 2})}, [w](V in) { return weighted_sum(diff::matmul(in[0], in[1]), w); });
  }
  {
    auto w = s.rt({2, 3, 5}, false);
    s.check("linear", {s.rt({2, 3, 4}), s.rt({4, 5}), s.rt({5})},
            [w](V in) { return weighted_sum(diff::linear(in[0], in[1], in[2]), w); });
  }
  {
    auto w = s.rt({6}, false);
    s.check("add", {s.rt({6}), s.rt({6})}, [w](V in) { return weighted_sum(diff::add(in[0], in[1]), w); });
    s.check("sub", {s.rt({6}), s.rt({6})}, [w](V in) { return weighted_sum(diff::sub(in[0], in[1]), w); });
    s.check("mul", {s.rt({6}), s.rt({6})}, [w](V in) { return weighted_sum(diff::mul(in[0], in[1]), w); });
    s.check("scale", {s.rt({6})}, [w](V in) { return weighted_sum(diff::scale(in[0], -2.5), w); });
    s.check("relu", {s.rt({6})}, [w](V in) { return weighted_sum(diff::relu(in[0]), w); });
    s.check("gelu", {s.rt({6})}, [w](V in) { return weighted_sum(diff::gelu(in[0]), w); });
  }
  {
    auto w = s.rt({3, 4, 2}, false);
    for (std::size_t axis = 0; axis < 3; ++axis)
      s.check("softmax(axis " + std::to_string(axis) + ")", {s.rt({3, 4, 2})},
              [w, axis](V in) { return weighted_sum(diff::softmax(in[0], axis), w); });
  }
  {
    auto w = s.rt({3, 5}, false);
    s.check("layer_norm", {s.rt({3, 5}), s.rt({5}), s.rt({5})},
            [w](V in) { return weighted_sum(diff::layer_norm(in[0], in[1], in[2], 1e-5), w); });
  }
  {
    const kernels::AttentionDims dims{2, 4, 2, 3};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 0, 1};
    auto w = s.rt({8, 6}, false);
    s.check("attention", {s.rt({8, 6}), s.rt({8, 6}), s.rt({8, 6})},
            [w, dims](V in) { return weighted_sum(diff::attention(in[0], in[1], in[2], dims), w); });
    s.check("attention(masked)", {s.rt({8, 6}), s.rt({8, 6}), s.rt({8, 6})},
            [w, dims, mask](V in) { return weighted_sum(diff::attention(in[0], in[1], in[2], dims, mask), w); });
  }
  {
    auto w = s.rt({3, 6}, false);
    s.check("concat_cols", {s.rt({3, 2}), s.rt({3, 4})}, [w](V in) {
      std::vector<TD> parts{in[0], in[1]};
      return weighted_sum(diff::concat_cols<double>(parts), w);
    });
    auto w2 = s.rt({4, 2}, false);
    s.check("concat_rows", {s.rt({3, 2}), s.rt({1, 2})}, [w2](V in) {
      std::vector<TD> parts{in[0], in[1]};
      return weighted_sum(diff::concat_rows<double>(parts), w2);
    });
    const std::vector<std::ptrdiff_t> idx{2, -1, 0, 2, 1};
    auto w3 = s.rt({5, 2}, false);
    s.check("gather_rows", {s.rt({3, 2})}, [w3, idx](V in) { return weighted_sum(diff::gather_rows(in[0], idx), w3); });
    auto w4 = s.rt({2, 3}, false);
    s.check("reshape", {s.rt({3, 2})}, [w4](V in) { return weighted_sum(diff::reshape(in[0], {2, 3}), w4); });
  }
  s.check("mean", {s.rt({7})}, [](V in) { return diff::mean(diff::mul(in[0], in[0])); });
  s.check("huber_loss", {s.rt({7}), s.rt({7})}, [](V in) { return diff::huber_loss(in[0], in[1], 0.5); });

  {
    model::ParamStore<double> p;
    model::add_block_params(p, "b", 4, 8, s.rng());
    perturb(p, s.rng());
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
    auto w = s.rt({6, 4}, false);
    std::vector<TD> in{s.rt({6, 4})};
    for (const auto& t : p.tensors()) in.push_back(t);
    s.check("transformer_block", in,
            [&p, w, mask](V x) { return weighted_sum(model::transformer_block(x[0], p, "b", 2, 3, 2, mask), w); });
  }
  {
    const model::ModelConfig c = toy_model();
    model::Model<double> m(c);
    perturb(m.params(), s.rng());
    // One short embryo so a frame slot is padded and masked.
    const auto a = toy_input(c, 2, s.rng());
    const auto b = toy_input(c, 1, s.rng());
    const TD w = TD::from({2, 1}, {0.7, -1.3});
    s.check("multimodal forward", m.params().tensors(), [&](V) {
      const model::ModelInput* batch[] = {&a, &b};
      return weighted_sum(m.forward(batch), w);
    });
  }
  {
    tabular::TabularConfig c;
    c.dim = 4;
    c.layers = 2;
    c.heads = 2;
    c.ehr_layout = {{"age", 0, 1, false}, {"bmi", 1, 1, false}, {"protocol", 2, 3, true}};
    c.interp_layout = {{"t2", 0, 1, false}, {"sym", 1, 1, false}};
    c.seed = 4;
    tabular::TabularModel<double> m(c);
    perturb(m.params(), s.rng());
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<model::ModelInput> ins(2);
    for (auto& in : ins) {
      in.ehr = {nd(s.rng()), nd(s.rng()), 0.0, 0.0, 0.0};
      in.ehr[2 + s.rng()() % 3] = 1.0;
      in.interp = {nd(s.rng()), nd(s.rng())};
    }
    const TD w = TD::from({2, 1}, {1.1, -0.6});
    s.check("tabular forward", m.params().tensors(), [&](V) {
      const model::ModelInput* batch[] = {&ins[0], &ins[1]};
      return weighted_sum(m.forward(batch), w);
    });
  }
  return s.take();
}

}  // namespace mmv::cli
