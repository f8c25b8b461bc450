use proptest::prelude::*;

use pseudocool_cli::output::{num, OutDir};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn formatted_numbers_parse_back_exactly(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn tables_round_trip_through_csv(
        rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 0..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        let header: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let path = out.write_table("t.csv", &header, &rows).unwrap();
        let mut reader = csv::Reader::from_path(path).unwrap();
        let back: Vec<Vec<f64>> = reader
            .records()
            .map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect())
            .collect();
        prop_assert_eq!(back, rows);
    }
}
