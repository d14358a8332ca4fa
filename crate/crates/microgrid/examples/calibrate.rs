//! Scratch calibration harness: baseline profits per seed and step timing.

use std::sync::Arc;
use std::time::Instant;

use microgrid::config::ScenarioParams;
use microgrid::data_io::{synth_scenario, Scenario};
use microgrid::env::policy::make_baseline_policy;
use microgrid::env::{rollout_day, run_fixed_baseline, run_tou_baseline, Environment};
use microgrid::seeds::stream_rng;

fn itemize(scenario: &Arc<Scenario>, policy_name: &str) {
    let mut env = Environment::new(scenario.clone()).unwrap();
    let mut policy = make_baseline_policy(policy_name, &scenario.params.pricing).unwrap();
    let mut rng = stream_rng(1234, "baseline");
    let days = scenario.days;
    let mut sums = [0.0f64; 12];
    let mut day_import_kwh = 0.0;
    let mut night_import_kwh = 0.0;
    let mut shed_kwh = 0.0;
    for d in 0..days {
        let rec = rollout_day(&mut env, policy.as_mut(), d, &mut rng).unwrap();
        for s in &rec.steps {
            sums[0] += s.income_load_cents;
            sums[1] += s.income_tcl_cents;
            sums[2] += s.income_sell_cents;
            sums[3] += s.cost_compensation_cents;
            sums[4] += s.cost_import_cents;
            sums[5] += s.cost_export_cents;
            sums[6] += s.reward_cents;
            sums[7] += s.p_load;
            sums[8] += s.p_tcl_fleet;
            sums[9] += s.p_buy;
            sums[10] += s.p_sell;
            sums[11] += s.p_tsl.max(0.0);
            if (8..20).contains(&s.hour) {
                day_import_kwh += s.p_buy;
            } else {
                night_import_kwh += s.p_buy;
            }
            shed_kwh += s.p_tsl.max(0.0);
        }
    }
    let n = days as f64;
    println!(
        "  {policy_name:>6}: reward {:>9.0}  inc_load {:>9.0} inc_tcl {:>8.0} inc_sell {:>8.0}  comp {:>7.0} import {:>8.0} export {:>7.0}",
        sums[6] / n, sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n, sums[5] / n
    );
    println!(
        "          load {:>6.0} kWh/d  tcl {:>6.0}  buy {:>6.0} (day {:>6.0} night {:>6.0})  sell {:>6.0}  shed {:>5.0}",
        sums[7] / n, sums[8] / n, sums[9] / n, day_import_kwh / n, night_import_kwh / n,
        sums[10] / n, shed_kwh / n
    );
}

struct HandPolicy {
    levels: [i8; 24],
    allocs: [u8; 24],
    shortage: u8,
    overplus: u8,
}

impl microgrid::env::policy::OperatorPolicy for HandPolicy {
    fn name(&self) -> &'static str {
        "hand"
    }
    fn decide(
        &mut self,
        state: &microgrid::env::MgState,
        _scenario: &Scenario,
    ) -> microgrid::env::ActionTuple {
        let h = state.t_step % 24;
        microgrid::env::ActionTuple {
            a_loads: (self.levels[h] + 2) as u8,
            a_tcls: self.allocs[h],
            a_shortage: self.shortage,
            a_overplus: self.overplus,
        }
    }
}

fn eval_hand(scenario: &Arc<Scenario>, label: &str, policy: &mut HandPolicy) {
    let mut env = Environment::new(scenario.clone()).unwrap();
    let mut rng = stream_rng(1234, "eval");
    let mut total = 0.0;
    for d in 0..scenario.days {
        let rec = rollout_day(&mut env, policy, d, &mut rng).unwrap();
        total += rec.steps.iter().map(|s| s.reward_cents).sum::<f64>();
    }
    println!("  {label:>28}: {:>8.0}", total / scenario.days as f64);
}

fn main() {
    let days = 10;
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 && args[1] == "train" {
        let episodes: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
        let scenario = Arc::new(synth_scenario(42, days, ScenarioParams::default()).unwrap());
        let tou = run_tou_baseline(scenario.clone(), 1234).unwrap();
        let fixed = run_fixed_baseline(scenario.clone(), 1234).unwrap();
        let envf = |k: &str, d: f64| {
            std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
        };
        let envu = |k: &str, d: usize| {
            std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
        };
        let defaults = microgrid::trainer::TrainConfig::default();
        let config = microgrid::trainer::TrainConfig {
            workers: 1,
            episodes,
            seed: envu("SEED", 7) as u64,
            epsilon_decay_episodes: envu("EPS_DECAY", episodes / 2),
            n_step: envu("N_STEP", defaults.n_step),
            learning_rate: envf("LR", defaults.learning_rate),
            beta_reg: envf("BETA_REG", defaults.beta_reg),
            beta_v: envf("BETA_V", defaults.beta_v),
            reward_scale: envf("REWARD_SCALE", defaults.reward_scale),
            replay_capacity: envu("REPLAY_CAP", defaults.replay_capacity),
            epsilon_start: envf("EPS_START", defaults.epsilon_start),
            epsilon_end: envf("EPS_END", defaults.epsilon_end),
            gamma: envf("GAMMA", defaults.gamma),
            weight_decay: envf("WD", defaults.weight_decay),
            temperature_start: envf("TEMP_START", defaults.temperature_start),
            temperature_end: envf("TEMP_END", defaults.temperature_end),
            batch_size: envu("BATCH", defaults.batch_size),
            sync_interval: envu("SYNC", defaults.sync_interval),
            ..defaults
        };
        let t0 = Instant::now();
        let out = microgrid::trainer::train(scenario.clone(), &config).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        let eval = microgrid::trainer::evaluate(
            scenario.clone(),
            &out.net,
            &config.encoder,
            1234,
            config.lower_grid_points,
        )
        .unwrap();
        let (first, last) = microgrid::trainer::quartile_means(&out.episodes);
        println!(
            "episodes {episodes}: train {train_secs:.0}s  dyn {:.0}  tou {tou:.0}  fixed {fixed:.0}  dyn/fixed {:.3}  dyn/tou {:.3}",
            eval.mean_profit_cents,
            eval.mean_profit_cents / fixed,
            eval.mean_profit_cents / tou
        );
        println!("quartiles: first {first:.0} last {last:.0}");
        let n = out.episodes.len();
        for chunk in out.episodes.chunks(n / 10 + 1) {
            let mean = chunk.iter().map(|e| e.reward_cents).sum::<f64>() / chunk.len() as f64;
            print!("{mean:>8.0}");
        }
        println!("  (reward by decile)");
        for chunk in out.episodes.chunks(n / 10 + 1) {
            let mean = chunk.iter().map(|e| e.policy_loss).sum::<f64>() / chunk.len() as f64;
            print!("{mean:>8.2}");
        }
        println!("  (policy loss by decile)");
        for chunk in out.episodes.chunks(n / 10 + 1) {
            let mean = chunk.iter().map(|e| e.value_loss).sum::<f64>() / chunk.len() as f64;
            print!("{mean:>8.2}");
        }
        println!("  (value loss by decile)");
        for chunk in out.episodes.chunks(n / 10 + 1) {
            let mean = chunk.iter().map(|e| e.entropy_term).sum::<f64>() / chunk.len() as f64;
            print!("{mean:>8.2}");
        }
        println!("  (entropy term by decile)");
        let day0 = &eval.per_day[0];
        let levels: Vec<i8> = day0.steps.iter().map(|s| s.applied_level).collect();
        let allocs: Vec<f64> = day0.steps.iter().map(|s| s.alloc_kw).collect();
        println!("eval day0 levels: {levels:?}");
        println!("eval day0 allocs: {allocs:?}");
        let mut mean_level = [0.0f64; 24];
        let mut mean_alloc = [0.0f64; 24];
        for day in &eval.per_day {
            for (h, s) in day.steps.iter().enumerate() {
                mean_level[h] += f64::from(s.applied_level);
                mean_alloc[h] += s.alloc_kw;
            }
        }
        let nd = eval.per_day.len() as f64;
        print!("mean levels:");
        for v in mean_level {
            print!(" {:+.1}", v / nd);
        }
        println!();
        print!("mean allocs:");
        for v in mean_alloc {
            print!(" {:.0}", v / nd);
        }
        println!();
        println!(
            "eval day0 reward {:.0}; shed {:.0} kWh",
            day0.profit_cents,
            day0.steps.iter().map(|s| s.p_tsl.max(0.0)).sum::<f64>()
        );
        {
            let encoder = microgrid::env::encoder::make_encoder(&config.encoder).unwrap();
            let bounds =
                microgrid::env::encoder::EncodingBounds::from_scenario(&scenario);
            let greedy_eval = |overrides: &[(usize, usize)]| -> f64 {
                let mut env = Environment::new(scenario.clone()).unwrap();
                let mut rng = stream_rng(1234, "eval");
                let mut total = 0.0;
                for d in 0..scenario.days {
                    let mut state = env.reset(d).unwrap();
                    for h in 0..24 {
                        let feats = encoder.encode(&state, &bounds);
                        let probs = out.net.policy(&feats).unwrap();
                        if d == 0 && [7, 8, 17, 18, 19].contains(&h) && overrides.is_empty() {
                            let lv: Vec<String> =
                                probs[0].iter().map(|p| format!("{p:.3}")).collect();
                            println!(
                                "  h{h:02} level-head probs (−2..+2): [{}]  value {:.3}",
                                lv.join(", "),
                                out.net.value(&feats).unwrap()
                            );
                        }
                        let mut values = [0usize; 4];
                        for (i, p) in probs.iter().enumerate().take(4) {
                            let mut best = 0;
                            for k in 1..p.len() {
                                if p[k] > p[best] {
                                    best = k;
                                }
                            }
                            values[i] = best;
                        }
                        for &(oh, lvl) in overrides {
                            if oh == h {
                                values[0] = lvl;
                            }
                        }
                        let action =
                            microgrid::env::ActionTuple::from_head_values(values).unwrap();
                        let outcome = env.step(action, &mut rng).unwrap();
                        total += outcome.reward_cents;
                        state = outcome.state;
                    }
                }
                total / scenario.days as f64
            };
            let g0 = greedy_eval(&[]);
            println!("  greedy manual: {g0:.0}");
            for h in [8usize, 17, 18, 19] {
                println!("  forced +1@h{h}: {:+.0}", greedy_eval(&[(h, 3)]) - g0);
            }
            println!(
                "  forced +1@{{17,18,19}}: {:+.0}",
                greedy_eval(&[(17, 3), (18, 3), (19, 3)]) - g0
            );
        }
        let mut sums = [0.0f64; 7];
        for day in &eval.per_day {
            for s in &day.steps {
                sums[0] += s.income_load_cents;
                sums[1] += s.income_tcl_cents;
                sums[2] += s.income_sell_cents;
                sums[3] += s.cost_compensation_cents;
                sums[4] += s.cost_import_cents;
                sums[5] += s.cost_export_cents;
                sums[6] += s.reward_cents;
            }
        }
        let n = eval.per_day.len() as f64;
        println!(
            "     dyn: reward {:>9.0}  inc_load {:>9.0} inc_tcl {:>8.0} inc_sell {:>8.0}  comp {:>7.0} import {:>8.0} export {:>7.0}",
            sums[6] / n, sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n, sums[5] / n
        );
        itemize(&scenario, "tou");
        return;
    }
    if args.len() > 1 && args[1] == "hand" {
        let scenario = Arc::new(synth_scenario(42, days, ScenarioParams::default()).unwrap());
        let tou = run_tou_baseline(scenario.clone(), 1234).unwrap();
        let fixed = run_fixed_baseline(scenario.clone(), 1234).unwrap();
        println!("baselines: tou {tou:.0} fixed {fixed:.0}");
        let tou_levels: [i8; 24] =
            std::array::from_fn(|h| if (8..20).contains(&h) { 1 } else { -1 });
        let night3: [u8; 24] = std::array::from_fn(|h| if h < 8 { 3 } else { 0 });
        let zero = [0i8; 24];
        let mut cases: Vec<(String, HandPolicy)> = Vec::new();
        for (lname, levels) in [("tou", tou_levels), ("zero", zero)] {
            for (aname, allocs) in [("alloc0", [0u8; 24]), ("night120", night3), ("all40", [1u8; 24])] {
                for (s, o) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
                    cases.push((
                        format!("{lname}/{aname}/s{s}o{o}"),
                        HandPolicy { levels, allocs, shortage: s, overplus: o },
                    ));
                }
            }
        }
        let deep: [i8; 24] = std::array::from_fn(|h| match h {
            1..=7 => -2,
            8..=19 => 1,
            22 | 23 => 2,
            _ => 0,
        });
        cases.push(("deepnight/night120/s1o1".into(), HandPolicy {
            levels: deep,
            allocs: night3,
            shortage: 1,
            overplus: 1,
        }));
        for (label, mut policy) in cases {
            eval_hand(&scenario, &label, &mut policy);
        }
        // marginal value of a single +1 level hour over the all-neutral base
        let base = |levels: [i8; 24]| HandPolicy {
            levels,
            allocs: night3,
            shortage: 0,
            overplus: 0,
        };
        let mut env = Environment::new(scenario.clone()).unwrap();
        let mut score = |p: &mut HandPolicy| -> f64 {
            let mut rng = stream_rng(1234, "eval");
            let mut total = 0.0;
            for d in 0..scenario.days {
                let rec = rollout_day(&mut env, p, d, &mut rng).unwrap();
                total += rec.steps.iter().map(|s| s.reward_cents).sum::<f64>();
            }
            total / scenario.days as f64
        };
        let zero_score = score(&mut base(zero));
        print!("single +1 deltas:");
        for h in 0..24 {
            let mut levels = zero;
            levels[h] = 1;
            print!(" {:.0}", score(&mut base(levels)) - zero_score);
        }
        println!();
        print!("single -1 deltas:");
        for h in 0..24 {
            let mut levels = zero;
            levels[h] = -1;
            print!(" {:.0}", score(&mut base(levels)) - zero_score);
        }
        println!();
        let tou_score = score(&mut base(tou_levels));
        print!("tou drop-hour deltas:");
        for h in 0..24 {
            let mut levels = tou_levels;
            levels[h] = 0;
            print!(" {:.0}", score(&mut base(levels)) - tou_score);
        }
        println!();
        return;
    }
    for seed in [1u64, 3, 7, 42] {
        let scenario = Arc::new(synth_scenario(seed, days, ScenarioParams::default()).unwrap());
        let t0 = Instant::now();
        let tou = run_tou_baseline(scenario.clone(), 1234).unwrap();
        let t_tou = t0.elapsed().as_secs_f64();
        let fixed = run_fixed_baseline(scenario.clone(), 1234).unwrap();
        println!(
            "seed {seed:>3}: tou {tou:>9.1} fixed {fixed:>9.1} ratio {:>6.3} ({t_tou:.2}s/{days}d)",
            tou / fixed
        );
        itemize(&scenario, "tou");
        itemize(&scenario, "fixed");
    }
}
