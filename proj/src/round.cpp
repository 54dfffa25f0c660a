#include "fedlaw/round.hpp"

#include <chrono>

#include "fedlaw/rng.hpp"

namespace fedlaw::fl {

std::string policy_name(const WeightPolicy& policy) {
  switch (policy.kind) {
    case PolicyKind::FedAvg: return "fedavg";
    case PolicyKind::FixedGamma: return "fixed_gamma";
    case PolicyKind::AdaptiveGWS: return "adaptive_gws";
    case PolicyKind::AttentiveLAW: return "attentive_law";
    case PolicyKind::EarlyStoppedLAW: return "early_stopped_law";
    case PolicyKind::FedLAW: return policy.freeze ? "fedlaw_frozen" : "fedlaw";
    case PolicyKind::FedLAWSWA: return "fedlaw_swa";
    case PolicyKind::ServerFT: return "server_ft";
  }
  throw config_error("unknown policy kind");
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "fedavg") return PolicyKind::FedAvg;
  if (name == "fixed_gamma") return PolicyKind::FixedGamma;
  if (name == "adaptive_gws") return PolicyKind::AdaptiveGWS;
  if (name == "attentive_law") return PolicyKind::AttentiveLAW;
  if (name == "early_stopped_law") return PolicyKind::EarlyStoppedLAW;
  if (name == "fedlaw" || name == "fedlaw_frozen") return PolicyKind::FedLAW;
  if (name == "fedlaw_swa") return PolicyKind::FedLAWSWA;
  if (name == "server_ft") return PolicyKind::ServerFT;
  throw config_error("unknown policy name: " + name);
}

namespace {

/// Resolves the aggregation weights for this round under the given policy.
AggWeights apply_policy(const WeightPolicy& policy, int round, const RunContext& ctx,
                        std::span<const ClientUpdate> updates,
                        law::ServerOptConfig server_opt) {
  server_opt.shuffle_seed = derive_seed(ctx.run_seed, seed_tag::server_opt,
                                        static_cast<std::uint64_t>(round));
  switch (policy.kind) {
    case PolicyKind::FedAvg:
    case PolicyKind::ServerFT:
      return datasize_weights(updates);
    case PolicyKind::FixedGamma: {
      AggWeights w = datasize_weights(updates);
      if (!(policy.fixed_gamma > 0.0)) throw config_error("fixed gamma must be > 0");
      w.gamma = policy.fixed_gamma;
      return w;
    }
    case PolicyKind::AdaptiveGWS:
      return law::learn_gamma(ctx.spec, updates, ctx.proxy, server_opt).weights;
    case PolicyKind::AttentiveLAW:
      return law::learn_lambda(ctx.spec, updates, ctx.proxy, server_opt).weights;
    case PolicyKind::EarlyStoppedLAW:
      return law::early_stopped_law(round, policy.stop_round, ctx.spec, updates, ctx.proxy,
                                    server_opt)
          .weights;
    case PolicyKind::FedLAW:
      if (policy.freeze) return datasize_weights(updates);  // machinery held at init
      return law::learn_joint(ctx.spec, updates, ctx.proxy, server_opt).weights;
    case PolicyKind::FedLAWSWA:
      return law::learn_two_stage_swa(ctx.spec, updates, ctx.proxy, server_opt).weights;
  }
  throw config_error("unknown policy kind");
}

}  // namespace

RoundRecord run_round(RoundState& state, const RunContext& ctx, const WeightPolicy& policy) {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = state.round + 1;
  const auto& cohort = sample_cohort(ctx.schedule, round);

  std::vector<ClientUpdate> updates;
  updates.reserve(cohort.size());
  for (int id : cohort) {
    const auto seed = derive_seed(ctx.run_seed, seed_tag::client,
                                  static_cast<std::uint64_t>(round),
                                  static_cast<std::uint64_t>(id));
    updates.push_back(local_train(ctx.clients[static_cast<std::size_t>(id)], ctx.spec,
                                  state.global_model, state.lr, ctx.train, id, seed));
  }

  const auto proxy_batch = ctx.proxy.as_batch();
  const AggWeights vanilla = datasize_weights(updates);
  const auto fedavg_point = aggregate(updates, vanilla, state.global_model, ctx.train.global_lr);
  const double proxy_loss_before = nn::forward(ctx.spec, fedavg_point, proxy_batch).loss;

  const AggWeights weights = apply_policy(policy, round, ctx, updates, ctx.server_opt);
  nn::ParamVector<float> next_model =
      aggregate(updates, weights, state.global_model, ctx.train.global_lr);
  if (policy.kind == PolicyKind::ServerFT) {
    auto ft_opt = ctx.server_opt;
    ft_opt.shuffle_seed = derive_seed(ctx.run_seed, seed_tag::server_opt,
                                      static_cast<std::uint64_t>(round));
    next_model = law::server_finetune(ctx.spec, next_model, ctx.proxy, ft_opt);
  }
  const double proxy_loss_after = nn::forward(ctx.spec, next_model, proxy_batch).loss;

  RoundRecord rec;
  rec.round = round;
  rec.cohort_ids = cohort;
  rec.lambda = weights.lambda;
  rec.gamma = weights.gamma;
  rec.proxy_loss_before = proxy_loss_before;
  rec.proxy_loss_after = proxy_loss_after;

  rec.cohort_coherence = coherence::cohort_coherence(updates, weights.lambda);
  std::vector<data::ClassHistogram> cohort_hists;
  cohort_hists.reserve(updates.size());
  for (const auto& u : updates) cohort_hists.push_back(u.histogram);
  rec.hetero_coherence =
      coherence::heterogeneity_coherence(cohort_hists, weights.lambda, ctx.global_histogram);

  const auto global_grad = weighted_pseudo_gradient(updates, weights.lambda);
  const auto norms = coherence::norm_decomposition(state.global_model, global_grad,
                                                   weights.gamma, ctx.train.global_lr);
  rec.opt_norm = norms.opt_norm;
  rec.reg_norm = norms.reg_norm;
  rec.r = norms.r;

  const auto eval = evaluate(ctx.spec, next_model, ctx.test_set);
  rec.test_accuracy = eval.accuracy;
  rec.test_loss = eval.loss;

  state.global_model = std::move(next_model);
  state.lr *= ctx.train.lr_decay;
  state.round = round;

  rec.wallclock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace fedlaw::fl
