#[allow(dead_code)]
mod validate_corpus {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/validate_corpus.rs"));
}

#[allow(dead_code)]
mod embedding_store {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/embedding_store.rs"));
}

#[allow(dead_code)]
mod loss_kernels {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/loss_kernels.rs"));
}

#[allow(dead_code)]
mod gradcheck {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gradcheck.rs"));
}

#[allow(dead_code)]
mod train_synthetic {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_synthetic.rs"));
}

#[allow(dead_code)]
mod benchmark_tables {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/benchmark_tables.rs"));
}

#[allow(dead_code)]
mod drop_report {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/drop_report.rs"));
}

#[test]
fn validate_corpus_runs() {
    validate_corpus::run_example().expect("validate_corpus example");
}

#[test]
fn embedding_store_runs() {
    embedding_store::run_example().expect("embedding_store example");
}

#[test]
fn loss_kernels_runs() {
    loss_kernels::run_example().expect("loss_kernels example");
}

#[test]
fn gradcheck_runs() {
    gradcheck::run_example().expect("gradcheck example");
}

#[test]
fn train_synthetic_runs() {
    train_synthetic::run_example().expect("train_synthetic example");
}

#[test]
fn benchmark_tables_runs() {
    benchmark_tables::run_example().expect("benchmark_tables example");
}

#[test]
fn drop_report_runs() {
    drop_report::run_example().expect("drop_report example");
}
