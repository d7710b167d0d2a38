use fedtier::{
    generate_synthetic, run_experiment, Algorithm, AssignmentPolicy, ExperimentConfig,
    Hyperparams, LearnerSpec, PartitionPlan, PartitionScheme,
};

fn main() -> fedtier::Result<()> {
    let data = generate_synthetic(7, 10, 60, 2.0, 7)?;
    let cfg = ExperimentConfig {
        learner: LearnerSpec::logistic_regression(10, 7),
        hp: Hyperparams::default(),
        plan: PartitionPlan::new(
            PartitionScheme::QuantitySkew {
                beta: 0.7,
                top_count: 2,
            },
            7,
            90,
        ),
        algorithm: Algorithm::MtfGraspAvg,
        policy: AssignmentPolicy::default(),
        test_fraction: 0.2,
    };
    let out = run_experiment(&cfg, &data)?;
    let last = out.records.last().unwrap();
    println!("final accuracy {:.4}", last.global_accuracy);
    println!("model traffic  {} params", out.ledger.total_model_traffic());
    Ok(())
}
