#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedlaw/law.hpp"
#include "test_util.hpp"

using namespace fedlaw;
using testutil::make_mini_round;
using testutil::models_of;
using testutil::random_batch;
using testutil::random_params;
using testutil::rel_err;

TEST_CASE("softmax base maps zeros to the uniform simplex") {
  const auto l = law::to_lambda({Eigen::Vector3d::Zero(), law::BaseFn::Exponential});
  for (int i = 0; i < 3; ++i) CHECK(l[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("quadratic base normalizes squared coordinates") {
  Eigen::VectorXd x(2);
  x << 1.0, 1.0;
  const auto l = law::to_lambda({x, law::BaseFn::Quadratic});
  CHECK(l[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(l[1] == doctest::Approx(0.5).epsilon(1e-15));
  Eigen::VectorXd x2(3);
  x2 << 1.0, -2.0, 2.0;
  const auto l2 = law::to_lambda({x2, law::BaseFn::Quadratic});
  CHECK(l2[0] == doctest::Approx(1.0 / 9.0));
  CHECK(l2[1] == doctest::Approx(4.0 / 9.0));
  CHECK(l2.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax base is shift invariant") {
  for (const double c : {-40.0, -1.0, 0.0, 3.0, 55.0}) {
    Eigen::VectorXd x(2);
    x << c, c + std::log(3.0);
    const auto l = law::to_lambda({x, law::BaseFn::Exponential});
    CHECK(l[0] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(l[1] == doctest::Approx(0.75).epsilon(1e-9));
  }
  Rng rng(5);
  Eigen::VectorXd x(6);
  for (int i = 0; i < 6; ++i) x[i] = rng.normal();
  const auto base = law::to_lambda({x, law::BaseFn::Exponential});
  const auto shifted = law::to_lambda({x.array() + 123.456, law::BaseFn::Exponential});
  for (int i = 0; i < 6; ++i) CHECK(std::abs(base[i] - shifted[i]) < 1e-9);
}

TEST_CASE("lambda is a simplex for random parameters of both bases") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(1 + static_cast<Eigen::Index>(rng.next_below(8)));
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = 5.0 * rng.normal();
    for (const auto base : {law::BaseFn::Exponential, law::BaseFn::Quadratic}) {
      if (base == law::BaseFn::Quadratic && x.squaredNorm() == 0.0) continue;
      const auto l = law::to_lambda({x, base});
      double sum = 0.0;
      for (Eigen::Index i = 0; i < l.size(); ++i) {
        CHECK(l[i] >= 0.0);
        sum += l[i];
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("quadratic base rejects the all-zero parameter") {
  CHECK_THROWS_AS(law::to_lambda({Eigen::Vector2d::Zero(), law::BaseFn::Quadratic}),
                  std::domain_error);
}

TEST_CASE("aggregation-weight gradients match finite differences") {
  const nn::ModelSpec spec({2, 4, 3});
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    std::vector<nn::ParamVector<double>> models;
    for (std::uint64_t j = 0; j < 3; ++j)
      models.push_back(random_params<double>(spec, 10 * trial + j));
    std::vector<const nn::ParamVector<double>*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    const auto batch = random_batch<double>(16, 2, 3, trial + 40);

    for (const auto base : {law::BaseFn::Exponential, law::BaseFn::Quadratic}) {
      Rng rng(trial + 7);
      Eigen::VectorXd x(3);
      for (int i = 0; i < 3; ++i) x[i] = 0.5 + 0.3 * rng.normal();  // away from quad. degeneracy
      const double gamma = rng.uniform(0.7, 1.3);
      law::LambdaParam lp{x, base};

      const auto grad = law::agg_weight_grad(spec, ptrs, gamma, lp, batch);

      auto loss_at = [&](double g, const Eigen::VectorXd& xs) {
        const auto w = law::combine_models(ptrs, g, law::to_lambda({xs, base}));
        return nn::forward(spec, w, batch).loss;
      };
      const double h = 1e-5;
      const double fd_gamma = (loss_at(gamma + h, x) - loss_at(gamma - h, x)) / (2 * h);
      CHECK(rel_err(grad.d_gamma, fd_gamma) < 1e-4);
      for (int i = 0; i < 3; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd_x = (loss_at(gamma, xp) - loss_at(gamma, xm)) / (2 * h);
        CHECK(rel_err(grad.d_x[i], fd_x) < 1e-4);
      }
    }
  }
}

TEST_CASE("identical models give symmetric lambda gradients and zero d_x") {
  const nn::ModelSpec spec({3, 5, 4});
  const auto shared = random_params<double>(spec, 3);
  std::vector<const nn::ParamVector<double>*> ptrs{&shared, &shared, &shared};
  const auto batch = random_batch<double>(10, 3, 4, 44);
  law::LambdaParam lp{Eigen::Vector3d(0.2, -0.1, 0.4), law::BaseFn::Exponential};
  const auto grad = law::agg_weight_grad(spec, ptrs, 1.0, lp, batch);
  CHECK(grad.d_lambda[0] == doctest::Approx(grad.d_lambda[1]).epsilon(1e-12));
  CHECK(grad.d_lambda[1] == doctest::Approx(grad.d_lambda[2]).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(grad.d_x[i]) < 1e-12);
}

TEST_CASE("one-hot lambda at gamma=1 reduces to evaluating that model") {
  const nn::ModelSpec spec({3, 5, 4});
  std::vector<nn::ParamVector<double>> models;
  for (std::uint64_t j = 0; j < 3; ++j) models.push_back(random_params<double>(spec, 20 + j));
  std::vector<const nn::ParamVector<double>*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const auto batch = random_batch<double>(12, 3, 4, 45);
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(3);
  one_hot[1] = 1.0;
  const auto grad = law::weight_grad_at(spec, ptrs, 1.0, one_hot, batch);
  CHECK(grad.loss == doctest::Approx(nn::forward(spec, models[1], batch).loss).epsilon(1e-12));
}

TEST_CASE("adam first step moves each coordinate by at most ~lr") {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd g(4);
  g << 100.0, -3.0, 0.5, 1e-4;
  auto state = law::AdamState::zeros(4);
  const auto next = law::adam_step(p, g, state, 0.01, 0.5, 0.999, 1e-8);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(next[i] - p[i]) <= 0.01 * (1.0 + 1e-6));
  // Direction opposes the gradient.
  for (int i = 0; i < 4; ++i)
    if (g[i] != 0.0) CHECK(next[i] * g[i] <= 0.0);
}

TEST_CASE("adam with zero gradients never moves") {
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  auto state = law::AdamState::zeros(3);
  auto cur = p;
  for (int step = 0; step < 10; ++step)
    cur = law::adam_step(cur, Eigen::VectorXd::Zero(3), state, 0.1, 0.5, 0.999, 1e-8);
  CHECK(cur == p);
}

TEST_CASE("three adam steps match the hand-unrolled recurrence") {
  const double lr = 0.05, b1 = 0.5, b2 = 0.999, eps = 1e-8;
  Eigen::VectorXd p(2);
  p << 0.3, -0.7;
  std::vector<Eigen::VectorXd> grads;
  Rng rng(9);
  for (int s = 0; s < 3; ++s) {
    Eigen::VectorXd g(2);
    g << rng.normal(), rng.normal();
    grads.push_back(g);
  }

  auto state = law::AdamState::zeros(2);
  auto fast = p;
  for (const auto& g : grads) fast = law::adam_step(fast, g, state, lr, b1, b2, eps);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(2), v = Eigen::VectorXd::Zero(2), slow = p;
  for (int s = 0; s < 3; ++s) {
    m = b1 * m + (1 - b1) * grads[static_cast<std::size_t>(s)];
    v = (b2 * v.array() + (1 - b2) * grads[static_cast<std::size_t>(s)].array().square()).matrix();
    const double bc1 = 1 - std::pow(b1, s + 1), bc2 = 1 - std::pow(b2, s + 1);
    for (int i = 0; i < 2; ++i)
      slow[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
  for (int i = 0; i < 2; ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
}

TEST_CASE("learned gamma matches a dense 1-D grid search") {
  auto mr = make_mini_round(3, 100.0, 8, 1.2, 0.08);
  law::ServerOptConfig cfg;
  const auto result = law::learn_gamma(mr.spec, mr.updates, mr.proxy, cfg);

  // Independent oracle: dense grid over gamma with lambda fixed at data size.
  const auto lambda = fl::datasize_weights(mr.updates).lambda;
  const auto models = models_of(mr.updates);
  const auto batch = mr.proxy.as_batch();
  double best_gamma = 0.5, best_loss = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 1000; ++i) {
    const double g = 0.5 + i * 0.001;
    const double loss = nn::forward(mr.spec, law::combine_models(models, g, lambda), batch).loss;
    if (loss < best_loss) {
      best_loss = loss;
      best_gamma = g;
    }
  }
  CHECK(std::abs(result.weights.gamma - best_gamma) < 0.01);
  CHECK(result.best_loss <= result.init_loss);
}

TEST_CASE("flat loss in gamma keeps gamma at its initialization") {
  auto mr = make_mini_round();
  // All-zero models make the aggregate independent of gamma.
  for (auto& u : mr.updates) u.local_model.data.setZero();
  law::ServerOptConfig cfg;
  const auto result = law::learn_gamma(mr.spec, mr.updates, mr.proxy, cfg);
  CHECK(result.weights.gamma == 1.0);
}

TEST_CASE("single-client lambda learning returns the trivial simplex") {
  auto mr = make_mini_round(1, 1.0);
  law::ServerOptConfig cfg;
  cfg.epochs = 5;
  const auto result = law::learn_lambda(mr.spec, mr.updates, mr.proxy, cfg);
  CHECK(result.weights.lambda.size() == 1);
  CHECK(result.weights.lambda[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(result.weights.gamma == 1.0);
}

TEST_CASE("a clearly best client earns more than uniform weight") {
  auto mr = make_mini_round(4, 1.0, 8, 1.2, 0.0);  // lr 0: all clients stay at w_g
  // Replace client 2's model with one actually trained on proxy-matched data.
  fl::TrainConfig cfg;
  cfg.local_epochs = 30;
  cfg.batch_size = 16;
  const auto trained = fl::local_train(mr.proxy, mr.spec, mr.global_model, 0.08, cfg, 2, 99);
  mr.updates[2].local_model = trained.local_model;
  mr.updates[2].pseudo_gradient = trained.pseudo_gradient;

  law::ServerOptConfig opt;
  const auto result = law::learn_lambda(mr.spec, mr.updates, mr.proxy, opt);
  CHECK(result.weights.lambda[2] > 0.25);
  CHECK(result.best_loss <= result.init_loss);
}

TEST_CASE("lambda stays on the simplex at every epoch of the trajectory") {
  auto mr = make_mini_round();
  law::ServerOptConfig cfg;
  cfg.epochs = 30;
  const auto result = law::learn_lambda(mr.spec, mr.updates, mr.proxy, cfg);
  for (const auto& x : result.x_path) {
    const auto l = law::to_lambda({x, cfg.base_fn});
    double sum = 0.0;
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      CHECK(l[i] >= 0.0);
      sum += l[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("joint learning never ends worse than its initialization") {
  auto mr = make_mini_round();
  law::ServerOptConfig cfg;
  const auto result = law::learn_joint(mr.spec, mr.updates, mr.proxy, cfg);
  CHECK(result.best_loss <= result.init_loss);
  CHECK(result.weights.gamma >= law::kGammaFloor);
}

TEST_CASE("identical models and sizes keep lambda fixed under joint learning") {
  auto mr = make_mini_round(3, 1000.0, 8, 1.2, 0.0);  // lr 0: identical local models
  // Force exactly equal data sizes.
  for (auto& u : mr.updates) u.data_size = 50;
  law::ServerOptConfig cfg;
  cfg.epochs = 20;
  const auto result = law::learn_joint(mr.spec, mr.updates, mr.proxy, cfg);
  for (Eigen::Index i = 0; i < result.weights.lambda.size(); ++i)
    CHECK(result.weights.lambda[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("joint learning is at least as good as each single-variable mode") {
  auto mr = make_mini_round(4, 0.3, 8, 1.6, 0.08);
  law::ServerOptConfig cfg;
  const auto joint = law::learn_joint(mr.spec, mr.updates, mr.proxy, cfg);
  const auto gamma_only = law::learn_gamma(mr.spec, mr.updates, mr.proxy, cfg);
  const auto lambda_only = law::learn_lambda(mr.spec, mr.updates, mr.proxy, cfg);
  CHECK(joint.best_loss <= std::min(gamma_only.best_loss, lambda_only.best_loss) + 1e-3);
}

TEST_CASE("swa with a single cycle returns the final iterate of that lr path") {
  auto mr = make_mini_round(4, 0.3, 8, 1.6, 0.08);
  law::ServerOptConfig cfg;
  cfg.epochs = 10;
  cfg.swa_cycle_len = 10;  // exactly one cycle, one collection point
  const auto result = law::learn_two_stage_swa(mr.spec, mr.updates, mr.proxy, cfg);
  REQUIRE(result.swa_collected.size() == 1);
  const auto final_lambda = law::to_lambda({result.x_path.back(), cfg.base_fn});
  for (Eigen::Index i = 0; i < final_lambda.size(); ++i)
    CHECK(result.weights.lambda[i] == doctest::Approx(final_lambda[i]).epsilon(1e-12));
}

TEST_CASE("swa-averaged lambda is a valid simplex") {
  auto mr = make_mini_round(4, 0.3, 8, 1.6, 0.08);
  law::ServerOptConfig cfg;
  cfg.epochs = 30;
  cfg.swa_cycle_len = 10;
  const auto result = law::learn_two_stage_swa(mr.spec, mr.updates, mr.proxy, cfg);
  CHECK(result.swa_collected.size() == 3);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < result.weights.lambda.size(); ++i) {
    CHECK(result.weights.lambda[i] >= 0.0);
    sum += result.weights.lambda[i];
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
  CHECK(result.best_loss <= result.init_loss);
}

TEST_CASE("swa snapshots replay from the logged x trajectory") {
  auto mr = make_mini_round(4, 0.3, 8, 1.6, 0.08);
  law::ServerOptConfig cfg;
  cfg.epochs = 25;
  cfg.swa_cycle_len = 5;
  const auto result = law::learn_two_stage_swa(mr.spec, mr.updates, mr.proxy, cfg);
  REQUIRE(result.swa_collected.size() == 5);
  for (std::size_t c = 0; c < 5; ++c) {
    const auto replayed =
        law::to_lambda({result.x_path[5 * (c + 1) - 1], cfg.base_fn});
    for (Eigen::Index i = 0; i < replayed.size(); ++i)
      CHECK(result.swa_collected[c][i] == doctest::Approx(replayed[i]).epsilon(1e-12));
  }
}

TEST_CASE("early stopping switches to data-size weights after the stop round") {
  auto mr = make_mini_round(4, 0.3, 8, 1.6, 0.08);
  law::ServerOptConfig cfg;
  cfg.epochs = 10;
  const auto lambda_ds = fl::datasize_weights(mr.updates).lambda;

  // stop_round = 0: data-size weights from round 1 onward.
  const auto stopped = law::early_stopped_law(1, 0, mr.spec, mr.updates, mr.proxy, cfg);
  for (Eigen::Index i = 0; i < lambda_ds.size(); ++i)
    CHECK(stopped.weights.lambda[i] == lambda_ds[i]);
  CHECK(stopped.weights.gamma == 1.0);

  // Unbounded stop round: identical to attentive LAW.
  const auto active =
      law::early_stopped_law(7, std::numeric_limits<int>::max(), mr.spec, mr.updates, mr.proxy, cfg);
  const auto attentive = law::learn_lambda(mr.spec, mr.updates, mr.proxy, cfg);
  for (Eigen::Index i = 0; i < attentive.weights.lambda.size(); ++i)
    CHECK(active.weights.lambda[i] == attentive.weights.lambda[i]);
}

TEST_CASE("gamma is clamped at its floor under sustained downward pressure") {
  auto mr = make_mini_round(3, 1.0, 8, 1.2, 0.0);
  // Huge random models: shrinking toward zero keeps lowering the proxy loss,
  // so unconstrained gamma would go negative.
  Rng rng(4);
  for (auto& u : mr.updates)
    for (Eigen::Index i = 0; i < u.local_model.data.size(); ++i)
      u.local_model.data[i] = static_cast<float>(8.0 * rng.normal());
  law::ServerOptConfig cfg;
  cfg.epochs = 500;
  cfg.lr_gamma = 0.05;
  const auto result = law::learn_gamma(mr.spec, mr.updates, mr.proxy, cfg);
  double lowest = 1.0;
  for (const double g : result.gamma_path) {
    CHECK(g >= law::kGammaFloor);
    lowest = std::min(lowest, g);
  }
  CHECK(lowest < 0.05);  // the pressure was real, the floor held
  CHECK(result.weights.gamma >= law::kGammaFloor);
}

TEST_CASE("server fine-tuning runs exactly the configured adam steps") {
  auto mr = make_mini_round();
  law::ServerOptConfig cfg;
  cfg.server_ft_epochs = 2;
  cfg.server_ft_lr = 1e-3;
  const auto tuned = law::server_finetune(mr.spec, mr.global_model, mr.proxy, cfg);

  // Hand-rolled reference: 2 full-batch Adam steps on the model parameters.
  Eigen::VectorXd w = mr.global_model.data.cast<double>();
  auto state = law::AdamState::zeros(w.size());
  const auto batch = mr.proxy.as_batch();
  for (int step = 0; step < 2; ++step) {
    nn::ParamVector<float> wf{w.cast<float>(), mr.global_model.layout};
    const auto lg = nn::loss_grad(mr.spec, wf, batch);
    w = law::adam_step(w, lg.grad.data.cast<double>(), state, cfg.server_ft_lr, cfg.beta1,
                       cfg.beta2, cfg.adam_eps);
  }
  const Eigen::VectorXf expected = w.cast<float>();
  CHECK(tuned.data == expected);
  // And it actually reduces the proxy loss.
  CHECK(nn::forward(mr.spec, tuned, batch).loss <
        nn::forward(mr.spec, mr.global_model, batch).loss);
}
