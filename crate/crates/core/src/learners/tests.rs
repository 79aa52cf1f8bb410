use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::gradients::{baselines, fused_gradient};
use super::*;
use crate::matrix_games::{payoff, Action, GameKind, MatrixState};
use crate::rng::{stream, Stream};

fn table_policy(actor: [f64; 5], critic: [f64; 5]) -> PolicyParameters {
    let mut p = PolicyParameters::matrix_table(&mut ChaCha8Rng::seed_from_u64(0));
    p.actor.set_parameters(actor.to_vec()).unwrap();
    p.critic.set_parameters(critic.to_vec()).unwrap();
    p
}

fn step(state: MatrixState, action: usize, reward: f64) -> AgentStep {
    AgentStep {
        input: state.one_hot().to_vec(),
        action,
        reward,
    }
}

use MatrixState::{Initial, Played};
const C: Action = Action::C;
const D: Action = Action::D;

/// Imagined return by writing out the imagined reward stream and summing it.
fn brute_force_imagined(rewards: &[f64], t: usize, kappa: u32, gamma: f64) -> f64 {
    let mut stream: Vec<f64> = vec![rewards[t - 1]; kappa as usize];
    stream.extend_from_slice(&rewards[t..]);
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in stream {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[test]
fn returns_small_example() {
    assert_eq!(discounted_returns(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
    assert!(discounted_returns(&[], 0.9).is_empty());
}

#[test]
fn imagined_return_with_kappa_one_repeats_once() {
    let rewards = [-1.0, -3.0, 0.0];
    let returns = discounted_returns(&rewards, 0.5);
    let hat = imagined_returns(&rewards, &returns, &[1, 1, 1], 0.5).unwrap();
    assert_eq!(hat[0], None);
    assert_relative_eq!(hat[1].unwrap(), -1.0 + 0.5 * returns[1], epsilon = 1e-12);
    assert_relative_eq!(hat[2].unwrap(), -3.0 + 0.5 * returns[2], epsilon = 1e-12);
}

#[test]
fn imagined_return_rejects_bad_input() {
    let rewards = [1.0, 2.0];
    let returns = discounted_returns(&rewards, 0.5);
    assert!(imagined_returns(&rewards, &returns, &[1], 0.5).is_err());
    assert!(matches!(
        imagined_returns(&rewards, &returns, &[1, 0], 0.5),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        imagined_returns(&rewards, &returns, &[1, 1], 1.0),
        Err(Error::Domain(_))
    ));
}

proptest! {
    #[test]
    fn imagined_returns_match_explicit_summation(
        rewards in prop::collection::vec(-4.0f64..4.0, 2..40),
        kappa_seed in any::<u64>(),
        gamma in prop::sample::select(vec![0.0, 0.5, 0.9, 0.96]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(kappa_seed);
        let kappas = sample_kappas(rewards.len(), 10, &mut rng);
        let returns = discounted_returns(&rewards, gamma);
        let hat = imagined_returns(&rewards, &returns, &kappas, gamma).unwrap();
        for t in 1..rewards.len() {
            let expected = brute_force_imagined(&rewards, t, kappas[t], gamma);
            prop_assert!((hat[t].unwrap() - expected).abs() < 1e-10);
        }
    }
}

#[test]
fn kappa_draws_are_uniform() {
    for z in [1u32, 2, 10] {
        let draws = sample_kappas(100_000, z, &mut stream(3, Stream::Kappa(0)));
        let mut counts = vec![0usize; z as usize];
        for k in draws {
            assert!((1..=z).contains(&k));
            counts[k as usize - 1] += 1;
        }
        if z == 1 {
            continue;
        }
        let expected = 100_000.0 / z as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new((z - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "z={z}: chi2 {chi2} >= {critical}");
    }
}

#[test]
fn policy_gradient_single_step_by_hand() {
    // logit 0 at the initial state: pi(C) = 0.5, d log pi(C) / d logit = 0.5.
    let policy = table_policy([0.0; 5], [0.25, 0.0, 0.0, 0.0, 0.0]);
    let episode = AgentEpisode {
        steps: vec![step(Initial, 0, 2.0)],
    };
    let g = policy_gradient(&policy, &episode, &[2.0], 0.9).unwrap();
    assert_relative_eq!(g[0], 0.5 * (2.0 - 0.25), epsilon = 1e-15);
    assert!(g[1..].iter().all(|&v| v == 0.0));

    let episode = AgentEpisode {
        steps: vec![step(Initial, 1, 2.0)],
    };
    let g = policy_gradient(&policy, &episode, &[2.0], 0.9).unwrap();
    assert_relative_eq!(g[0], -0.5 * (2.0 - 0.25), epsilon = 1e-15);
}

#[test]
fn policy_gradient_is_zero_when_critic_matches_returns() {
    let episode = AgentEpisode {
        steps: vec![step(Initial, 0, -1.0), step(Played(C, C), 1, -2.0)],
    };
    let returns = discounted_returns(&episode.rewards(), 0.5);
    let policy = table_policy([0.3; 5], [returns[0], returns[1], 0.0, 0.0, 0.0]);
    let g = policy_gradient(&policy, &episode, &returns, 0.5).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn sq_gradient_by_hand() {
    // Step 1 is in state CC after playing C; the imagined return weights the CC reward.
    let gamma = 0.5;
    let policy = table_policy([0.0; 5], [0.0, -1.5, 0.0, 0.0, 0.0]);
    let episode = AgentEpisode {
        steps: vec![step(Initial, 0, -1.0), step(Played(C, C), 1, 0.0)],
    };
    let returns = discounted_returns(&episode.rewards(), gamma);
    let imagined = imagined_returns(&episode.rewards(), &returns, &[1, 2], gamma).unwrap();
    // kappa 2: (1 - 0.25) / 0.5 * -1 + 0.25 * 0 = -1.5
    assert_relative_eq!(imagined[1].unwrap(), -1.5, epsilon = 1e-15);
    let g = sq_policy_gradient(&policy, &episode, &imagined, gamma).unwrap();
    assert_eq!(g, vec![0.0; 5]);

    let policy = table_policy([0.0; 5], [0.0, -2.5, 0.0, 0.0, 0.0]);
    let g = sq_policy_gradient(&policy, &episode, &imagined, gamma).unwrap();
    // gamma^1 * (Rhat - b) * d log pi(C | CC) = 0.5 * 1.0 * 0.5
    assert_relative_eq!(g[1], 0.25, epsilon = 1e-15);
    assert_eq!(g[0], 0.0);
}

#[test]
fn sq_gradient_favours_a_better_status_quo() {
    // After mutual cooperation the learner defected and got punished; repeating CC would
    // have been better than what followed, so the term must raise pi(C | CC).
    let gamma = 0.96;
    let pd = |a, b| payoff(GameKind::PrisonersDilemma, (a, b)).0;
    let mut steps = vec![step(Initial, 0, pd(C, C)), step(Played(C, C), 1, pd(D, D))];
    steps.extend((0..150).map(|_| step(Played(D, D), 1, pd(D, D))));
    let episode = AgentEpisode { steps };
    let rewards = episode.rewards();
    let returns = discounted_returns(&rewards, gamma);
    let imagined = imagined_returns(&rewards, &returns, &vec![3; rewards.len()], gamma).unwrap();
    let b = returns[1];
    let policy = table_policy([0.0; 5], [0.0, b, 0.0, 0.0, 0.0]);
    let g = sq_policy_gradient(&policy, &episode, &imagined, gamma).unwrap();
    assert!(g[1] > 0.0, "{g:?}");
    // In DD the status quo is as bad as what followed, and repeating D is discouraged
    // against a zero baseline.
    assert!(g[4] > 0.0);
}

#[test]
fn fused_gradient_equals_weighted_sum_of_estimators() {
    let gamma = 0.9;
    let policy = table_policy([0.2, -0.4, 1.1, 0.0, -0.7], [-3.0, -2.0, -1.0, 0.5, -4.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let states = [
        Initial,
        Played(C, D),
        Played(D, D),
        Played(C, C),
        Played(D, C),
    ];
    let episode = AgentEpisode {
        steps: (0..30)
            .map(|t| step(states[t % 5], (t * 7 % 3 == 0) as usize, -((t % 4) as f64)))
            .collect(),
    };
    let rewards = episode.rewards();
    let returns = discounted_returns(&rewards, gamma);
    let kappas = sample_kappas(rewards.len(), 10, &mut rng);
    let imagined = imagined_returns(&rewards, &returns, &kappas, gamma).unwrap();
    let pg = policy_gradient(&policy, &episode, &returns, gamma).unwrap();
    let sq = sq_policy_gradient(&policy, &episode, &imagined, gamma).unwrap();
    let b = baselines(&policy, &episode).unwrap();
    let (alpha, beta) = (0.7, 2.5);
    let slots: Vec<usize> = episode
        .steps
        .iter()
        .map(|s| policy.table_slot(&s.input).unwrap())
        .collect();
    for shortcut in [None, Some(slots.as_slice())] {
        let mut fused = vec![0.0; 5];
        fused_gradient(
            &policy,
            &episode,
            &returns,
            Some(&imagined),
            &b,
            shortcut,
            gamma,
            alpha,
            beta,
            &mut fused,
        )
        .unwrap();
        for i in 0..5 {
            assert_relative_eq!(fused[i], alpha * pg[i] + beta * sq[i], epsilon = 1e-10);
        }
    }
}

/// Agent 0's view of a played two-step PD between table policies.
fn enumerate_two_step(
    learner: &PolicyParameters,
    opponent: &PolicyParameters,
    gamma: f64,
) -> Vec<(f64, AgentEpisode, f64)> {
    let prob = |p: &PolicyParameters, s: MatrixState, a: Action| {
        let pc = p.action_probabilities(&s.one_hot()).unwrap()[0];
        if a == C {
            pc
        } else {
            1.0 - pc
        }
    };
    let mut out = Vec::new();
    for a0 in [C, D] {
        for b0 in [C, D] {
            for a1 in [C, D] {
                for b1 in [C, D] {
                    let s1 = Played(a0, b0);
                    let p = prob(learner, Initial, a0)
                        * prob(opponent, Initial, b0)
                        * prob(learner, s1, a1)
                        * prob(opponent, s1.swapped(), b1);
                    let r0 = payoff(GameKind::PrisonersDilemma, (a0, b0)).0;
                    let r1 = payoff(GameKind::PrisonersDilemma, (a1, b1)).0;
                    let episode = AgentEpisode {
                        steps: vec![step(Initial, a0.index(), r0), step(s1, a1.index(), r1)],
                    };
                    out.push((p, episode, r0 + gamma * r1));
                }
            }
        }
    }
    out
}

#[test]
fn expected_policy_gradient_matches_finite_difference() {
    let gamma = 0.8;
    let base = [0.3, -0.2, 0.7, -1.1, 0.4];
    let critic = [-2.0, -1.0, 0.5, -3.0, 1.0];
    let opponent = table_policy([-0.5, 0.9, 0.1, -0.3, 0.6], [0.0; 5]);
    let objective = |actor: [f64; 5]| -> f64 {
        enumerate_two_step(&table_policy(actor, critic), &opponent, gamma)
            .iter()
            .map(|(p, _, ret)| p * ret)
            .sum()
    };
    let learner = table_policy(base, critic);
    let mut expected = [0.0; 5];
    for (p, episode, _) in enumerate_two_step(&learner, &opponent, gamma) {
        let returns = discounted_returns(&episode.rewards(), gamma);
        let g = policy_gradient(&learner, &episode, &returns, gamma).unwrap();
        for i in 0..5 {
            expected[i] += p * g[i];
        }
    }
    let h = 1e-6;
    for i in 0..5 {
        let mut up = base;
        let mut down = base;
        up[i] += h;
        down[i] -= h;
        let fd = (objective(up) - objective(down)) / (2.0 * h);
        assert!(
            (fd - expected[i]).abs() <= 1e-4 * fd.abs().max(1e-3),
            "slot {i}: finite difference {fd}, estimator {}",
            expected[i]
        );
    }
}

fn config(alpha: f64, beta: f64) -> SQConfig {
    SQConfig {
        alpha,
        beta,
        gamma: 0.5,
        batch_size: 1,
        ..SQConfig::default()
    }
}

#[test]
fn combined_update_single_step_by_hand() {
    let mut learner = Learner::new(
        LearnerKind::StatusQuo,
        table_policy([0.0; 5], [0.0; 5]),
        config(1.0, 1.0),
    );
    let batch = [AgentEpisode {
        steps: vec![step(Initial, 0, 2.0)],
    }];
    let stats = combined_update(&mut learner, &batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // actor: 0.005 * (0.5 * (2 - 0)); critic: 0 - 1 * 2 * (0 - 2) / 1.
    assert_relative_eq!(learner.policy.actor.parameters()[0], 0.005, epsilon = 1e-15);
    assert_relative_eq!(learner.policy.critic.parameters()[0], 4.0, epsilon = 1e-15);
    assert_relative_eq!(stats.critic_mse, 4.0, epsilon = 1e-15);
    assert!(learner.policy.actor.parameters()[1..]
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn combined_update_averages_the_actor_over_the_batch() {
    let make = || {
        Learner::new(
            LearnerKind::Selfish,
            table_policy([0.0; 5], [0.0; 5]),
            config(1.0, 0.0),
        )
    };
    let a = AgentEpisode {
        steps: vec![step(Initial, 0, 2.0)],
    };
    let b = AgentEpisode {
        steps: vec![step(Initial, 1, 4.0)],
    };
    let mut learner = make();
    combined_update(&mut learner, &[a, b], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // (0.5 * 2 - 0.5 * 4) / 2 = -0.5
    assert_relative_eq!(
        learner.policy.actor.parameters()[0],
        0.005 * -0.5,
        epsilon = 1e-15
    );
}

#[test]
fn combined_update_rejects_empty_batches() {
    let mut learner = Learner::new(
        LearnerKind::StatusQuo,
        table_policy([0.0; 5], [0.0; 5]),
        config(1.0, 1.0),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(combined_update(&mut learner, &[], &mut rng).is_err());
    assert!(combined_update(&mut learner, &[AgentEpisode::default()], &mut rng).is_err());
}

#[test]
fn discounted_critic_weights_sum_to_length() {
    let w = CriticWeighting::Discounted.weights(200, 0.96);
    assert_relative_eq!(w.iter().sum::<f64>(), 200.0, epsilon = 1e-9);
    assert_relative_eq!(w[1] / w[0], 0.96, epsilon = 1e-12);
    assert_eq!(CriticWeighting::Uniform.weights(3, 0.5), vec![1.0; 3]);
}

fn matrix_agent(kind: LearnerKind, cfg: SQConfig, seed: u64, seat: usize) -> Agent {
    Agent::Learner(Learner::new(
        kind,
        PolicyParameters::matrix_table(&mut stream(seed, Stream::Init(seat))),
        cfg,
    ))
}

fn short_ipd_run(kind: LearnerKind, beta: f64, seed: u64) -> PairRun {
    let cfg = SQConfig {
        beta,
        batch_size: 8,
        ..SQConfig::default()
    };
    let mut env = MatrixPairEnv::with_horizon(GameKind::PrisonersDilemma, 0.96, 30);
    let agents = [
        matrix_agent(kind, cfg, seed, 0),
        matrix_agent(kind, cfg, seed, 1),
    ];
    train_pair(&mut env, agents, 15, 8, seed).unwrap()
}

#[test]
fn zero_beta_status_quo_learner_is_bitwise_selfish() {
    for seed in [1, 2] {
        let sq = short_ipd_run(LearnerKind::StatusQuo, 0.0, seed);
        let sl = short_ipd_run(LearnerKind::Selfish, 1.0, seed);
        for i in 0..2 {
            assert_eq!(
                sq.agents[i].parameter_fingerprint(),
                sl.agents[i].parameter_fingerprint()
            );
        }
        assert_eq!(sq.epochs, sl.epochs);
    }
}

#[test]
fn nonzero_beta_changes_the_trajectory() {
    let sq = short_ipd_run(LearnerKind::StatusQuo, 1.0, 1);
    let sl = short_ipd_run(LearnerKind::Selfish, 1.0, 1);
    assert_ne!(
        sq.agents[0].parameter_fingerprint(),
        sl.agents[0].parameter_fingerprint()
    );
}

#[test]
fn training_is_deterministic_per_seed() {
    let a = short_ipd_run(LearnerKind::StatusQuo, 1.0, 5);
    let b = short_ipd_run(LearnerKind::StatusQuo, 1.0, 5);
    assert_eq!(
        a.agents[0].parameter_fingerprint(),
        b.agents[0].parameter_fingerprint()
    );
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn fixed_policies_do_not_update() {
    let mut agent = fixed_policy(FixedPolicy::AlwaysDefect);
    let before = agent.parameter_fingerprint();
    let batch = [AgentEpisode {
        steps: vec![step(Initial, 1, -2.0)],
    }];
    let out = agent
        .update(&batch, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert!(out.is_none());
    assert_eq!(agent.parameter_fingerprint(), before);
    assert_eq!(agent.trainable_parameter_count(), 0);
    assert_eq!(
        agent
            .act(
                &[1.0, 0.0, 0.0, 0.0, 0.0],
                &mut ChaCha8Rng::seed_from_u64(0)
            )
            .unwrap(),
        1
    );
    assert_eq!(
        fixed_policy(FixedPolicy::AlwaysCooperate)
            .act(&[], &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap(),
        0
    );
}

#[test]
fn agents_see_the_game_from_their_own_seat() {
    let mut env = MatrixPairEnv::new(GameKind::PrisonersDilemma, 0.96);
    env.reset();
    env.step([0, 1]).unwrap();
    let [mine, theirs] = env.inputs();
    assert_eq!(mine, Played(C, D).one_hot().to_vec());
    assert_eq!(theirs, Played(D, C).one_hot().to_vec());
}

#[test]
fn critic_error_falls_under_a_fixed_policy() {
    // alpha = beta = 0 freezes the actor at its random initialisation. The error is measured
    // on a held-out set of episodes so that only the critic moves it; the small step keeps
    // all 50 updates in the transient, before the batch noise floor.
    let seeds = 5;
    let updates = 50;
    let mut curve = vec![0.0; updates + 1];
    for seed in 0..seeds {
        let cfg = SQConfig {
            alpha: 0.0,
            beta: 0.0,
            batch_size: 50,
            critic_step: 0.05,
            critic_weighting: CriticWeighting::Uniform,
            ..SQConfig::default()
        };
        let mut agents = [
            matrix_agent(LearnerKind::Selfish, cfg, seed, 0),
            matrix_agent(LearnerKind::Selfish, cfg, seed, 1),
        ];
        let mut env = MatrixPairEnv::new(GameKind::PrisonersDilemma, 0.96);
        let mut rngs = [
            stream(seed, Stream::Agent(0)),
            stream(seed, Stream::Agent(1)),
        ];
        let mut kappa = stream(seed, Stream::Kappa(0));
        let mut play = |agents: &[Agent; 2]| -> Vec<AgentEpisode> {
            (0..cfg.batch_size)
                .map(|_| {
                    let [a, _] = play_episode(&mut env, agents, &mut rngs).unwrap();
                    a
                })
                .collect()
        };
        let held_out = play(&agents);
        let mse = |agent: &Agent| {
            let policy = &agent.learner().unwrap().policy;
            let (mut total, mut count) = (0.0, 0usize);
            for episode in &held_out {
                let returns = discounted_returns(&episode.rewards(), cfg.gamma);
                for (s, r) in episode.steps.iter().zip(returns) {
                    total += (policy.value(&s.input).unwrap() - r).powi(2);
                    count += 1;
                }
            }
            total / count as f64
        };
        curve[0] += mse(&agents[0]) / seeds as f64;
        for point in curve.iter_mut().skip(1) {
            let batch = play(&agents);
            agents[0].update(&batch, &mut kappa).unwrap().unwrap();
            *point += mse(&agents[0]) / seeds as f64;
        }
        let policy = &agents[0].learner().unwrap().policy;
        assert_eq!(
            policy.actor.parameters(),
            matrix_agent(LearnerKind::Selfish, cfg, seed, 0)
                .learner()
                .unwrap()
                .policy
                .actor
                .parameters()
        );
    }
    for w in curve.windows(2) {
        assert!(w[1] < w[0], "critic error rose: {curve:?}");
    }
}

#[test]
fn sampled_actions_follow_the_policy() {
    let policy = table_policy([1.0, 0.0, 0.0, 0.0, -2.0], [0.0; 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let input = Initial.one_hot();
    let cooperations = (0..n)
        .filter(|_| sample_action(&policy, &input, &mut rng).unwrap() == 0)
        .count();
    let p = crate::nn::sigmoid(1.0);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!(((cooperations as f64 / n as f64) - p).abs() < 5.0 * se);

    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50)
            .map(|_| sample_action(&policy, &Played(D, D).one_hot(), &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert!(sample_action(&policy, &[1.0, 0.0], &mut rng).is_err());
}

#[test]
fn table_shortcut_matches_the_network() {
    let policy = table_policy([0.3, -1.2, 2.0, 0.1, -0.4], [1.0, 2.0, 3.0, 4.0, 5.0]);
    for s in [
        Initial,
        Played(C, C),
        Played(C, D),
        Played(D, C),
        Played(D, D),
    ] {
        let input = s.one_hot();
        assert_eq!(policy.table_slot(&input), Some(s.index()));
        assert_eq!(
            policy.value(&input).unwrap(),
            policy.critic.forward_slice(&input).unwrap()[0]
        );
    }
    assert_eq!(policy.table_slot(&[0.5, 0.5, 0.0, 0.0, 0.0]), None);
    let meta = PolicyParameters::coin_meta(&mut ChaCha8Rng::seed_from_u64(0));
    assert!(!meta.is_table());
}

#[test]
fn coin_meta_policy_is_a_distribution() {
    let policy = PolicyParameters::coin_meta(&mut ChaCha8Rng::seed_from_u64(2));
    let input: Vec<f64> = (0..81).map(|i| (i % 3) as f64 * 0.5).collect();
    let probs = policy.action_probabilities(&input).unwrap();
    assert_eq!(probs.len(), 2);
    assert_relative_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    assert!(policy.value(&input).unwrap().is_finite());
}

#[test]
fn config_validation() {
    assert!(SQConfig::default().validate().is_ok());
    let bad = [
        SQConfig {
            z: 0,
            ..SQConfig::default()
        },
        SQConfig {
            beta: -1.0,
            ..SQConfig::default()
        },
        SQConfig {
            gamma: 1.0,
            ..SQConfig::default()
        },
        SQConfig {
            actor_step: 0.0,
            ..SQConfig::default()
        },
        SQConfig {
            batch_size: 0,
            ..SQConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Validation { .. })));
    }
}
