#include <doctest.h>

#include <filesystem>

#include "concf/model.hpp"
#include "support.hpp"

using namespace concf;

namespace {

ModelShape toy_shape(int users = 4, int items = 5, int dim = 8,
                     SharingLevel sharing = SharingLevel::EmbeddingOnly) {
  ModelShape s;
  s.num_users = users;
  s.num_items = items;
  s.dim = dim;
  s.sharing = sharing;
  return s;
}

// Zero model whose head outputs are the head biases: z_u = bu, z_i = bi.
ModelParams fixed_outputs(Head h, const RowVector& bu, const RowVector& bi) {
  ModelParams p = ModelParams::zeros(toy_shape());
  auto& t = p.mutable_tensors();
  t[p.slots(h).user.bh].value = bu;
  t[p.slots(h).item.bh].value = bi;
  return p;
}

bool same_tensors(const ModelParams& a, const ModelParams& b) {
  if (a.tensors().size() != b.tensors().size()) return false;
  for (std::size_t k = 0; k < a.tensors().size(); ++k)
    if (a.tensors()[k].name != b.tensors()[k].name || a.tensors()[k].value != b.tensors()[k].value)
      return false;
  return true;
}

}  // namespace

TEST_CASE("layer shapes follow the d, d/2, d/4 encoder") {
  const ModelParams p = ModelParams::init(toy_shape(3, 3, 64), 1);
  const auto& t = p.tensors();
  const HeadSlots& a = p.slots(Head::A);
  CHECK(t[a.user.emb].value.cols() == 64);
  CHECK(t[a.user.w1].value.rows() == 64);
  CHECK(t[a.user.w1].value.cols() == 32);
  CHECK(t[a.user.w2].value.cols() == 16);
  CHECK(t[a.user.wh].value.rows() == 16);
  CHECK(t[a.user.wh].value.cols() == 16);
  CHECK_THROWS_AS(ModelParams::init(toy_shape(3, 3, 6), 1), std::invalid_argument);
}

TEST_CASE("initialization is deterministic and seed dependent") {
  const auto a = ModelParams::init(toy_shape(), 42);
  const auto b = ModelParams::init(toy_shape(), 42);
  const auto c = ModelParams::init(toy_shape(), 43);
  CHECK(same_tensors(a, b));
  CHECK_FALSE(same_tensors(a, c));
}

TEST_CASE("sharing levels decide which tensors are shared") {
  const auto emb = ModelParams::init(toy_shape(), 1);
  CHECK(emb.slots(Head::A).user.emb == emb.slots(Head::B).user.emb);
  CHECK(emb.slots(Head::A).user.w1 != emb.slots(Head::B).user.w1);

  const auto full = ModelParams::init(toy_shape(4, 5, 8, SharingLevel::Full), 1);
  CHECK(full.slots(Head::A).item.w2 == full.slots(Head::E).item.w2);
  CHECK(full.slots(Head::A).item.wh != full.slots(Head::E).item.wh);

  const auto one = ModelParams::init(toy_shape(4, 5, 8, SharingLevel::EmbeddingPlusOneLayer), 1);
  CHECK(one.slots(Head::C).user.w1 == one.slots(Head::D).user.w1);
  CHECK(one.slots(Head::C).user.w2 != one.slots(Head::D).user.w2);

  const auto none = ModelParams::init(toy_shape(4, 5, 8, SharingLevel::NoSharing), 1);
  CHECK(none.slots(Head::A).user.emb != none.slots(Head::B).user.emb);
  CHECK_NOTHROW(none.find_tensor("B/item_emb"));
}

TEST_CASE("private tensors do not depend on which other heads exist") {
  ModelShape alone = toy_shape(4, 5, 8, SharingLevel::NoSharing);
  alone.heads = {Head::C};
  const auto solo = ModelParams::init(alone, 9);
  const auto all = ModelParams::init(toy_shape(4, 5, 8, SharingLevel::NoSharing), 9);
  for (const auto& t : solo.tensors())
    CHECK(all.tensors()[all.find_tensor(t.name)].value == t.value);
}

TEST_CASE("score semantics per head") {
  RowVector e0 = RowVector::Zero(2), e1 = RowVector::Zero(2);
  e0(0) = 1.0;
  e1(0) = 2.0;
  CHECK(score(fixed_outputs(Head::A, e0, e1), Head::A, 0, 0) == doctest::Approx(2.0));
  CHECK(score(fixed_outputs(Head::B, e0 * 0.3, e0 * 0.3), Head::B, 1, 2) == 0.0);
  CHECK(score(ModelParams::zeros(toy_shape()), Head::C, 0, 0) == doctest::Approx(0.5));
  // outside the unit ball both vectors are projected back onto it
  CHECK(score(fixed_outputs(Head::B, e0 * 3.0, -e0 * 5.0), Head::B, 0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("score ranges hold on random parameters") {
  std::mt19937_64 rng(3);
  ModelParams p = ModelParams::init(toy_shape(), 5);
  testing::randomize(p, rng, 1.0);
  for (int u = 0; u < 4; ++u)
    for (int i = 0; i < 5; ++i) {
      CHECK(score(p, Head::B, u, i) <= 0.0);
      const double c = score(p, Head::C, u, i);
      CHECK(c > 0.0);
      CHECK(c < 1.0);
    }
}

TEST_CASE("score_batch agrees with score and handles shapes") {
  std::mt19937_64 rng(4);
  ModelParams p = ModelParams::init(toy_shape(), 5);
  testing::randomize(p, rng);
  const int user[1] = {2};
  for (Head h : kAllHeads) {
    const Matrix all = score_batch(p, h, user, std::nullopt);
    REQUIRE(all.cols() == 5);
    for (int i = 0; i < 5; ++i) CHECK(all(0, i) == doctest::Approx(score(p, h, 2, i)).epsilon(1e-12));
    const EncodedHead enc(p, h);
    std::vector<double> row(5);
    enc.score_row(2, row);
    for (int i = 0; i < 5; ++i) CHECK(row[static_cast<std::size_t>(i)] == doctest::Approx(all(0, i)).epsilon(1e-12));
  }
  const int users[2] = {0, 3};
  const int items[3] = {4, 0, 4};
  CHECK(score_batch(p, Head::A, users, std::span<const int>(items)).rows() == 2);
  CHECK(score_batch(p, Head::A, users, std::span<const int>(items)).cols() == 3);
  CHECK(score_batch(p, Head::A, users, std::span<const int>()).size() == 0);
  CHECK_THROWS_AS(score(p, Head::A, 4, 0), std::out_of_range);
}

TEST_CASE("backward of the raw score matches finite differences") {
  std::mt19937_64 rng(6);
  for (Head h : kAllHeads) {
    ModelParams p = ModelParams::init(toy_shape(), 7);
    testing::randomize(p, rng);
    auto loss = [&](const ModelParams& q, Gradients* g) {
      const int users[2] = {1, 3};
      const int items[2] = {0, 4};
      HeadForward f = forward(q, h, users, items);
      double total = 0.0;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
          total += f.score(r, c);
          if (g) f.add_score_grad(r, c, 1.0);
        }
      if (g) f.backward(q, *g);
      return total;
    };
    const auto check = testing::check_gradients(p, loss);
    INFO("head " << head_tag(h) << ": " << check.where);
    CHECK(check.ok);
  }
}

TEST_CASE("zero loss gradient and the distance singularity give zero gradients") {
  ModelParams p = ModelParams::init(toy_shape(), 1);
  const int u[1] = {0};
  const int i[1] = {1};
  HeadForward f = forward(p, Head::A, u, i);
  f.add_score_grad(0, 0, 0.0);
  Gradients g(p);
  f.backward(p, g);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.touched(k)) CHECK(g.value(k).isZero(0.0));

  RowVector v = RowVector::Zero(2);
  v(1) = 0.4;
  ModelParams b = fixed_outputs(Head::B, v, v);
  HeadForward fb = forward(b, Head::B, u, i);
  fb.add_raw_grad(0, 0, 1.0);
  Gradients gb(b);
  fb.backward(b, gb);
  for (std::size_t k = 0; k < gb.size(); ++k)
    if (gb.touched(k)) CHECK(gb.value(k).isZero(0.0));
}

TEST_CASE("backward refuses a stale activation cache") {
  ModelParams p = ModelParams::init(toy_shape(), 1);
  const int u[1] = {0};
  HeadForward f = forward(p, Head::D, u, u);
  f.add_raw_grad(0, 0, 1.0);
  p.mutable_tensors()[0].value(0, 0) += 1.0;
  Gradients g(p);
  CHECK_THROWS_AS(f.backward(p, g), std::logic_error);
}

TEST_CASE("perturbing one head's encoder leaves another head's scores alone") {
  std::mt19937_64 rng(8);
  ModelParams p = ModelParams::init(toy_shape(), 2);
  testing::randomize(p, rng);
  const Matrix before = score_batch(p, Head::B, std::vector<int>{0, 1, 2, 3}, std::nullopt);
  auto& t = p.mutable_tensors();
  t[p.slots(Head::A).user.w1].value.array() += 0.5;
  t[p.slots(Head::A).item.w2].value.array() -= 0.5;
  const Matrix after = score_batch(p, Head::B, std::vector<int>{0, 1, 2, 3}, std::nullopt);
  CHECK(before == after);
}

TEST_CASE("adam: first step, zero gradient and non-finite gradients") {
  ModelParams p = ModelParams::init(toy_shape(), 1);
  const std::size_t slot = p.slots(Head::A).user.bh;
  p.mutable_tensors()[slot].value.setOnes();
  AdamState state = make_adam_state(p);

  Gradients g(p);
  g.at(slot).setOnes();
  apply_adam(p, g, state, {});
  CHECK(p.tensors()[slot].value(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(state.step == 1);

  const double m_before = state.m[slot](0, 0);
  Gradients zero(p);
  zero.at(slot).setZero();
  apply_adam(p, zero, state, {});
  CHECK(state.m[slot](0, 0) == doctest::Approx(0.9 * m_before));
  // with no gradient history a zero gradient leaves the weights alone
  AdamState fresh = make_adam_state(p);
  const Matrix now = p.tensors()[slot].value;
  apply_adam(p, zero, fresh, {});
  CHECK(p.tensors()[slot].value == now);

  Gradients bad(p);
  bad.at(slot)(0, 0) = std::nan("");
  try {
    apply_adam(p, bad, state, {}, "head A, batch 3");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("A/user.head.b") != std::string::npos);
    CHECK(msg.find("batch 3") != std::string::npos);
  }
}

TEST_CASE("identical runs follow identical trajectories") {
  auto run = [] {
    std::mt19937_64 rng(12);
    ModelParams p = ModelParams::init(toy_shape(), 3);
    AdamState s = make_adam_state(p);
    for (int step = 0; step < 5; ++step) {
      const int u[2] = {0, 2};
      const int i[2] = {1, 3};
      HeadForward f = forward(p, Head::A, u, i);
      f.add_raw_grad(0, 1, -1.0);
      f.add_raw_grad(1, 0, 0.5);
      Gradients g(p);
      f.backward(p, g);
      apply_adam(p, g, s, {});
    }
    return p;
  };
  CHECK(same_tensors(run(), run()));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  std::mt19937_64 rng(13);
  ModelParams p = ModelParams::init(toy_shape(6, 7, 8, SharingLevel::Full), 3);
  testing::randomize(p, rng);
  AdamState s = make_adam_state(p);
  s.step = 17;
  s.m[2].setConstant(0.125);
  s.v[3].setConstant(1.0 / 3.0);
  const auto path = std::filesystem::temp_directory_path() / "concf_model_test.ckpt";
  save_checkpoint(path, p, &s);
  const Checkpoint back = load_checkpoint(path);
  CHECK(same_tensors(p, back.params));
  CHECK(back.params.shape().sharing == SharingLevel::Full);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step == 17);
  CHECK(back.adam->m[2] == s.m[2]);
  CHECK(back.adam->v[3] == s.v[3]);

  save_checkpoint(path, p);
  CHECK_FALSE(load_checkpoint(path).adam.has_value());
}
