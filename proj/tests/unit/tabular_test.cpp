#include "doctest.h"

#include <fstream>
#include <random>

#include "mmv/diffcore/gradcheck.hpp"
#include "mmv/diffcore/ops.hpp"
#include "mmv/model/checkpoint.hpp"
#include "mmv/model/transformer.hpp"
#include "mmv/tabular/tabular.hpp"
#include "test_util.hpp"

using namespace mmv;
using namespace mmv::tabular;
using diff::Tensor;
using TD = Tensor<double>;
using data::FeatureSlot;
using model::ModelInput;

namespace {

TabularConfig toy_config() {
  TabularConfig c;
  c.dim = 4;
  c.layers = 1;
  c.heads = 2;
  c.ehr_layout = {{"age", 0, 1, false}, {"bmi", 1, 1, false}, {"protocol", 2, 3, true}};
  c.interp_layout = {{"t2", 0, 1, false}, {"sym", 1, 1, false}};
  c.seed = 4;
  return c;
}

ModelInput random_tab_input(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ModelInput in;
  in.ehr = {nd(rng), nd(rng), 0.0, 0.0, 0.0};
  in.ehr[2 + rng() % 3] = 1.0;
  in.interp = {nd(rng), nd(rng)};
  return in;
}

void perturb(model::ParamStore<double>& p, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto t : p.tensors())
    for (auto& x : t.mutable_data()) x += u(rng);
}

}  // namespace

TEST_CASE("n features give n+1 tokens") {
  const TabularConfig c = toy_config();
  CHECK(c.feature_count() == 5);
  const TabularModel<double> m(c);
  std::mt19937_64 rng(1);
  const auto a = random_tab_input(rng), b = random_tab_input(rng);
  const ModelInput* batch[] = {&a, &b};
  CHECK(m.tokenize(batch).shape() == Shape{2 * 6, c.dim});
  TabularConfig e = c;
  e.use_interp = false;
  CHECK(e.sequence_length() == 4);
}

TEST_CASE("single-feature single-layer model equals the hand-composed block") {
  TabularConfig c;
  c.dim = 4;
  c.layers = 1;
  c.heads = 2;
  c.use_ehr = false;
  c.interp_layout = {{"x", 0, 1, false}};
  TabularModel<double> m(c);
  std::mt19937_64 rng(2);
  perturb(m.params(), rng, 0.5);
  ModelInput in;
  in.interp = {0.7};
  const auto& p = m.params();
  const TD x = TD::from({1, 1}, {0.7});
  const TD tok = diff::linear(x, p.get("feature.interp.x.w"), p.get("feature.interp.x.b"));
  const TD seq = diff::concat_rows<double>(std::vector<TD>{p.get("cls"), tok});
  const TD z = model::transformer_block(seq, p, "block0", 1, 2, 2);
  const TD cls = diff::gather_rows(z, std::vector<std::ptrdiff_t>{0});
  const TD h = diff::layer_norm(cls, p.get("head.ln.g"), p.get("head.ln.b"));
  const double expected = diff::linear(h, p.get("head.w"), p.get("head.b")).item();
  CHECK(m.score(in) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("permuting feature order with matching parameters leaves the score unchanged") {
  const TabularConfig c = toy_config();
  TabularModel<double> m(c);
  std::mt19937_64 rng(3);
  perturb(m.params(), rng, 0.5);

  TabularConfig pc = c;
  // Declaration order protocol, age, bmi; the input vector is permuted to match.
  pc.ehr_layout = {{"protocol", 0, 3, true}, {"age", 3, 1, false}, {"bmi", 4, 1, false}};
  pc.interp_layout = {{"sym", 0, 1, false}, {"t2", 1, 1, false}};
  TabularModel<double> pm(pc);
  for (const auto& name : pm.params().names()) {
    auto dst = pm.params().get(name).mutable_data();
    const auto src = m.params().get(name).data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  for (int trial = 0; trial < 20; ++trial) {
    const ModelInput in = random_tab_input(rng);
    ModelInput pin;
    pin.ehr = {in.ehr[2], in.ehr[3], in.ehr[4], in.ehr[0], in.ehr[1]};
    pin.interp = {in.interp[1], in.interp[0]};
    CHECK(pm.score(pin) == doctest::Approx(m.score(in)).epsilon(1e-12));
  }
}

TEST_CASE("tabular gradient check") {
  for (bool ehr : {true, false}) {
    TabularConfig c = toy_config();
    c.use_ehr = ehr;
    c.layers = 2;
    TabularModel<double> m(c);
    std::mt19937_64 rng(4);
    perturb(m.params(), rng, 0.3);
    const auto a = random_tab_input(rng), b = random_tab_input(rng);
    const ModelInput* batch[] = {&a, &b};
    std::vector<TD> inputs = m.params().tensors();
    const double err = diff::grad_check(
        [&] { return diff::sum(diff::mul(m.forward(batch), TD::from({2, 1}, {1.1, -0.6}))); }, inputs);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("tabular parameter count") {
  const TabularConfig c = toy_config();
  // cls 4; numeric features 4 x (4 + 4); protocol table 3 x 4;
  // block(4, 16) = 4*(16+4) + 16 + (64+16) + (64+4) = 244; head 8 + 4 + 1.
  const std::size_t hand = 4 + 4 * 8 + 12 + 244 + 13;
  CHECK(parameter_count(c) == hand);
  CHECK(TabularModel<float>(c).params().numel() == hand);
}

TEST_CASE("tabular errors and checkpoints") {
  TabularConfig c = toy_config();
  c.use_ehr = c.use_interp = false;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.ehr_layout[1].offset = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const TabularModel<float> m(toy_config());
  ModelInput bad;
  bad.ehr = {0.0, 1.0};
  bad.interp = {0.0, 0.0};
  CHECK_THROWS_AS(m.score(bad), DimensionError);

  const auto dir = test::scratch_dir("tab_ckpt");
  save_tabular(dir / "t.mmvt", m);
  std::ifstream in(dir / "t.mmvt", std::ios::binary);
  char magic[5];
  in.read(magic, 5);
  CHECK(std::string(magic, 5) == "MMVT1");
  const auto loaded = load_tabular(dir / "t.mmvt");
  CHECK(loaded.model.config() == m.config());
  std::mt19937_64 rng(5);
  const auto x = random_tab_input(rng);
  CHECK(loaded.model.score(x) == m.score(x));
  CHECK_THROWS_AS(model::load_model(dir / "t.mmvt"), data::DataError);
}
