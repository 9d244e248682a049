use std::fs::File;
use std::io::BufReader;

use ets_core::ledger::{import_ndjson, verify_chain, TxKind};
use ets_core::simulator::{run, write_artifacts, PopulationSource, SimulationConfig, LEDGER_FILE};

#[test]
fn exported_day_reimports_to_the_same_head() {
    let cfg = SimulationConfig {
        seed: 19,
        population: PopulationSource::Synthetic { n_users: 80, profile: None },
        ..SimulationConfig::default()
    };
    let r = run(&cfg).map_err(|f| f.error).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&r, dir.path(), "t").unwrap();

    let file = BufReader::new(File::open(dir.path().join(LEDGER_FILE)).unwrap());
    let back = import_ndjson(file, Some(r.ledger.policy().clone())).unwrap();
    assert_eq!(back.head_hash(), r.ledger.head_hash());
    assert_eq!(back.wallets(), r.ledger.wallets());
    assert!(verify_chain(&back).is_clean());

    // inference from the chain alone reaches the same state
    let file = BufReader::new(File::open(dir.path().join(LEDGER_FILE)).unwrap());
    let inferred = import_ndjson(file, None).unwrap();
    assert_eq!(inferred.head_hash(), r.ledger.head_hash());
    assert!(r.ledger.transactions().any(|t| t.kind == TxKind::TripPayment));
}
