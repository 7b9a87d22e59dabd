#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "gradconceal/attacks.hpp"
#include "gradconceal/errors.hpp"
#include "gradconceal/gcm.hpp"
#include "projection_oracle.hpp"

using gc::Tensor;
namespace atk = gc::attack;
namespace nn = gc::nn;

namespace {

// Two classes on a 2-pixel input; Z_0 - Z_1 = 2a (x0 - 0.25), so the decision
// boundary is x0 = 0.25 and (0.5, 0.5) lies at L2 distance 0.25 from it.
nn::Model two_class_linear(float a) {
  auto m = nn::build_model(nn::ArchSpec::mlp({2, 2}), 0);
  m.set_parameter("block1.dense.weight", Tensor({2, 2}, {a, -a, 0, 0}));
  m.set_parameter("block1.dense.bias", Tensor({2}, {-0.25f * a, 0.25f * a}));
  return m;
}

atk::AttackConfig cw_config(double budget, double k = 0.0) {
  atk::AttackConfig c;
  c.family = atk::Family::cw;
  c.norm = {atk::Norm::l2, budget};
  c.cw.confidence = k;
  return c;
}

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("sign convention") {
    CHECK(atk::sign(0.0f) == 0.0f);
    CHECK(atk::sign(-0.0f) == 0.0f);
    CHECK(atk::sign(NAN) == 0.0f);
    CHECK(atk::sign(-3.0f) == -1.0f);
    CHECK(atk::sign(INFINITY) == 1.0f);
  }

  TEST_CASE("config validation") {
    atk::AttackConfig c;
    c.norm.p = atk::Norm::l2;
    CHECK_THROWS_AS(c.validate(10), gc::ConfigError);
    c = {};
    c.target = 10;
    CHECK_THROWS_AS(c.validate(10), gc::ConfigError);
    c = cw_config(1.0);
    CHECK_NOTHROW(c.validate(10));
    c.norm.p = atk::Norm::linf;
    CHECK_THROWS_AS(c.validate(10), gc::ConfigError);
    c = {};
    c.family = atk::Family::pgd;
    CHECK(c.pgd_step_size() == doctest::Approx(2.5 * (8.0 / 255.0) / 10));
    CHECK(c.describe() == "pgd-linf-0.0313725-s10");
    CHECK(atk::parse_norm("inf") == atk::Norm::linf);
    CHECK_THROWS_AS(atk::parse_family("jsma"), gc::ConfigError);
  }

  TEST_CASE("FGSM examples") {
    const Tensor x = Tensor::from({0.5f});
    CHECK(atk::fgsm_from_gradient(x, Tensor::from({-2.0f}), 0.0, false) == x);
    CHECK(atk::fgsm_from_gradient(x, Tensor::from({-2.0f}), 0.1, false)[0] == 0.4f);
    CHECK(atk::fgsm_from_gradient(x, Tensor::from({-2.0f}), 0.1, true)[0] == 0.6f);
    const Tensor y = atk::fgsm_from_gradient(Tensor::from({0.5f, 0.5f}), Tensor::from({0.0f, 1.0f}), 0.1, false);
    CHECK(y[0] == 0.5f);
    CHECK(y[1] == 0.6f);
    CHECK(atk::fgsm_from_gradient(Tensor::from({0.98f}), Tensor::from({1.0f}), 0.1, false)[0] == 1.0f);
  }

  TEST_CASE("model FGSM, targeted FGSM and non-Linf rejection") {
    const auto m = two_class_linear(4.0f);
    const Tensor x({1, 2}, {0.5f, 0.5f});
    const std::vector<int> y{0};
    atk::AttackConfig c;
    c.norm.eps = 0.1;
    auto adv = atk::fgsm(m, x, y, c);
    CHECK(adv.x_adv.values() == std::vector<float>{0.4f, 0.5f});
    CHECK(adv.perturbation_norm[0] == doctest::Approx(0.1));
    c.target = 1;
    adv = atk::fgsm(m, x, y, c);
    CHECK(adv.x_adv.values() == std::vector<float>{0.4f, 0.5f});
    c.norm.p = atk::Norm::l2;
    CHECK_THROWS_AS(atk::fgsm(m, x, y, c), gc::ConfigError);
  }

  TEST_CASE("projection examples") {
    CHECK(atk::project(Tensor::from({0.5f, -0.3f}), {atk::Norm::linf, 0.2}).values() == std::vector<float>{0.2f, -0.2f});
    const Tensor l2 = atk::project(Tensor::from({3.0f, 4.0f}), {atk::Norm::l2, 1.0});
    CHECK(l2[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(l2[1] == doctest::Approx(0.8).epsilon(1e-6));
    CHECK(atk::norm_value(l2.data(), atk::Norm::l2) <= 1.0);
    CHECK(atk::project(Tensor::from({3.0f, 1.0f}), {atk::Norm::l1, 2.0}).values() == std::vector<float>{2.0f, 0.0f});
    const Tensor inside = Tensor::from({0.1f, -0.2f});
    for (auto p : {atk::Norm::l1, atk::Norm::l2, atk::Norm::linf}) CHECK(atk::project(inside, {p, 1.0}) == inside);
  }

  TEST_CASE("projection matches the brute-force nearest point and is idempotent") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> eps_d(0.2, 1.0), r_d(-2.0, 2.0);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t dim = 2 + trial % 2;
      const auto p = std::array{atk::Norm::l1, atk::Norm::l2, atk::Norm::linf}[trial % 3];
      const double eps = std::round(eps_d(rng) * 1000.0) / 1000.0;
      std::vector<float> r(dim);
      for (auto& v : r) v = static_cast<float>(r_d(rng));
      const Tensor pr = atk::project(Tensor({dim}, r), {p, eps});
      const auto z = oracle::nearest_in_ball(std::vector<double>(r.begin(), r.end()), p, eps);
      INFO("p=", atk::to_string(p), " eps=", eps, " r=", r[0], ",", r[1], ",", (dim > 2 ? r[2] : 0.0f));
      for (std::size_t i = 0; i < dim; ++i) CHECK(std::abs(pr[i] - z[i]) <= 2e-3);
      CHECK(atk::project(pr, {p, eps}) == pr);
      // the L-inf clamp bound is eps as stored in float32
      const double radius = p == atk::Norm::linf ? static_cast<double>(static_cast<float>(eps)) : eps;
      CHECK(atk::norm_value(pr.data(), p) <= radius);
    }
  }

  TEST_CASE("ascent directions") {
    const Tensor g({2, 3}, {0.5f, -2.0f, 0.0f, 3.0f, 4.0f, 0.0f});
    CHECK(atk::ascent_direction(g, atk::Norm::linf).values() == std::vector<float>{1, -1, 0, 1, 1, 0});
    CHECK(atk::ascent_direction(g, atk::Norm::l1).values() == std::vector<float>{0, -1, 0, 0, 1, 0});
    const Tensor d2 = atk::ascent_direction(g, atk::Norm::l2);
    CHECK(d2[3] == doctest::Approx(0.6));
    CHECK(d2[4] == doctest::Approx(0.8));
    const Tensor ties({1, 3}, {2.0f, -2.0f, 1.0f});
    CHECK(atk::ascent_direction(ties, atk::Norm::l1).values() == std::vector<float>{1, 0, 0});
    const Tensor odd({1, 3}, {INFINITY, NAN, 1.0f}, gc::Finite::unchecked);
    CHECK(atk::ascent_direction(odd, atk::Norm::l2).values() == std::vector<float>{1, 0, 0});
    CHECK(atk::ascent_direction(odd, atk::Norm::linf).values() == std::vector<float>{1, 0, 1});
    CHECK(atk::ascent_direction(Tensor({1, 2}, 0.0f), atk::Norm::l2).values() == std::vector<float>{0, 0});
  }

  TEST_CASE("PGD reaches the interior maximiser of a concave objective") {
    // L(x) = -(x - 0.7)^2
    const atk::GradientFn grad = [](const Tensor& x) { return Tensor({1, 1}, {-2.0f * (x[0] - 0.7f)}); };
    const Tensor out = atk::pgd_ascend(grad, Tensor({1, 1}, {0.5f}), {{atk::Norm::linf, 0.3}, 10, 0.02, {}});
    CHECK(std::abs(out[0] - 0.7f) <= 1e-3);
  }

  TEST_CASE("PGD on a linear objective converges to the ball boundary") {
    const atk::GradientFn grad = [](const Tensor&) { return Tensor({1, 2}, {1.0f, 0.0f}); };
    std::vector<double> norms;
    atk::PgdSettings s{{atk::Norm::l2, 0.1}, 10, 2.5 * 0.1 / 10, {}};
    s.on_step = [&](std::size_t, const Tensor& r) { norms.push_back(atk::norm_value(r.data(), atk::Norm::l2)); };
    const Tensor out = atk::pgd_ascend(grad, Tensor({1, 2}, {0.5f, 0.5f}), s);
    CHECK(std::abs(out[0] - 0.6f) <= 1e-3);
    CHECK(out[1] == 0.5f);
    REQUIRE(norms.size() == 10);
    for (double n : norms) CHECK(n <= 0.1 + 1e-6);
  }

  TEST_CASE("one PGD step of size eps is FGSM") {
    std::mt19937_64 rng(3);
    const auto m = nn::build_model(nn::ArchSpec::smallcnn({10, 10, 1}), 2);
    const Tensor x = gradcheck::uniform({4, 10, 10, 1}, rng, 0.0f, 1.0f);
    const std::vector<int> y{0, 3, 5, 9};
    atk::AttackConfig f;
    atk::AttackConfig p;
    p.family = atk::Family::pgd;
    p.steps = 1;
    for (double step : {8.0 / 255.0, 0.1}) {
      p.step_size = step;
      CHECK(atk::pgd(m, x, y, p).x_adv == atk::fgsm(m, x, y, f).x_adv);
    }
  }

  TEST_CASE("attacks stay feasible under every norm, also through a cascade") {
    std::mt19937_64 rng(4);
    const auto m = std::make_shared<const nn::Model>(nn::build_model(nn::ArchSpec::smallcnn({10, 10, 1}), 5));
    const auto all = gc::gcm::cascade(m, {}, gc::gcm::Placement::all_layers());
    const Tensor x = gradcheck::uniform({3, 10, 10, 1}, rng, 0.0f, 1.0f);
    const std::vector<int> y{1, 2, 3};
    for (auto p : {atk::Norm::l1, atk::Norm::l2, atk::Norm::linf})
      for (double eps : {0.05, 0.5, 2.0}) {
        atk::AttackConfig c;
        c.family = atk::Family::pgd;
        c.norm = {p, eps};
        for (const nn::Classifier* model : {static_cast<const nn::Classifier*>(m.get()), static_cast<const nn::Classifier*>(&all)}) {
          const auto adv = atk::pgd(*model, x, y, c);
          for (std::size_t r = 0; r < 3; ++r) {
            std::vector<float> d(x.row_size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = adv.x_adv.row(r)[i] - x.row(r)[i];
            CHECK(atk::norm_value(d, p) <= eps + 1e-6);
          }
          for (float v : adv.x_adv.data()) CHECK((v >= 0.0f && v <= 1.0f));
          CHECK(atk::pgd(*model, x, y, c).x_adv == adv.x_adv);
        }
      }
  }

  TEST_CASE("C&W returns x unchanged for an already misclassified input") {
    const auto m = two_class_linear(100.0f);
    const Tensor x({1, 2}, {0.1f, 0.5f});  // class 1 side
    const std::vector<int> y{0};
    const auto adv = atk::cw(m, x, y, cw_config(1.0));
    CHECK(adv.success[0]);
    CHECK(adv.perturbation_norm[0] == 0.0);
    CHECK(adv.x_adv == x);
  }

  TEST_CASE("C&W finds the point-to-hyperplane distance within 5%") {
    const auto m = two_class_linear(100.0f);
    const Tensor x({1, 2}, {0.5f, 0.5f});
    const std::vector<int> y{0};
    const auto adv = atk::cw(m, x, y, cw_config(1.0));
    REQUIRE(adv.success[0]);
    CHECK(adv.perturbation_norm[0] >= 0.25);
    CHECK(adv.perturbation_norm[0] <= 0.2625);
    CHECK(nn::predict(m, adv.x_adv) == std::vector<int>{1});

    const auto confident = atk::cw(m, x, y, cw_config(1.0, 0.5));
    REQUIRE(confident.success[0]);
    CHECK(confident.perturbation_norm[0] >= adv.perturbation_norm[0]);
  }

  TEST_CASE("C&W respects the budget and supports targets") {
    const auto m = two_class_linear(100.0f);
    const Tensor x({1, 2}, {0.5f, 0.5f});
    const std::vector<int> y{0};
    const auto tight = atk::cw(m, x, y, cw_config(0.1));
    CHECK_FALSE(tight.success[0]);
    CHECK(tight.x_adv == x);
    auto c = cw_config(1.0);
    c.target = 1;
    const auto targeted = atk::cw(m, x, y, c);
    CHECK(targeted.success[0]);
    CHECK(nn::predict(m, targeted.x_adv) == std::vector<int>{1});
  }
}
