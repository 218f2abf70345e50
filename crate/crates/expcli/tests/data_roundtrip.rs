use demlab::clusterse::{ClusteredRecord, ClusteredRecords};
use expcli::data::{
    parse_checkpoints, parse_responses, parse_transactions, write_checkpoints, write_responses,
    write_transactions,
};
use expcli::scenario::{parse_scenario, write_scenario};
use expcli::{CheckpointRow, CheckpointSeries, DataError, Response, ResponseTable, VariantSeries};
use proptest::prelude::*;

const HEADER: &str = "experiment_id,variant_id,metric_id,time_index,count_c,mean_c,variance_c\n";

fn ident() -> impl Strategy<Value = String> {
    // commas, quotes and spaces exercise the CSV quoting
    "[a-z0-9 ,\"_-]{1,8}".prop_filter("non-empty", |s| !s.is_empty())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
    ]
}

fn variant(id: String, len: usize) -> impl Strategy<Value = VariantSeries> {
    (
        prop::collection::vec((1u64..50, 0u64..500, finite(), 0.0..1e9f64), len),
        0u64..10,
    )
        .prop_map(move |(steps, t0)| {
            let (mut t, mut count) = (t0, 0u64);
            let rows = steps
                .into_iter()
                .map(|(dt, dc, mean, variance)| {
                    let row = CheckpointRow {
                        time_index: t,
                        count: count + dc,
                        mean,
                        variance,
                    };
                    t += dt;
                    count += dc;
                    row
                })
                .collect();
            VariantSeries {
                variant_id: id.clone(),
                rows,
            }
        })
}

fn series_set() -> impl Strategy<Value = Vec<CheckpointSeries>> {
    prop::collection::vec((ident(), ident(), 1usize..4, 1usize..6), 1..4).prop_flat_map(|keys| {
        let mut seen = Vec::new();
        let unique: Vec<_> = keys
            .into_iter()
            .filter(|(e, m, _, _)| {
                let fresh = !seen.contains(&(e.clone(), m.clone()));
                seen.push((e.clone(), m.clone()));
                fresh
            })
            .collect();
        unique
            .into_iter()
            .map(|(e, m, nv, len)| {
                let variants: Vec<_> = (0..nv).map(|i| variant(format!("v{i}"), len)).collect();
                variants.prop_map(move |variants| CheckpointSeries {
                    experiment_id: e.clone(),
                    metric_id: m.clone(),
                    variants,
                })
            })
            .collect::<Vec<_>>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn checkpoint_tables_roundtrip(set in series_set()) {
        let mut buf = Vec::new();
        write_checkpoints(&mut buf, &set).unwrap();
        let back = parse_checkpoints(buf.as_slice()).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn response_tables_roundtrip(
        rows in prop::collection::vec((ident(), ident(), finite()), 1..40)
    ) {
        let table = ResponseTable {
            rows: rows
                .into_iter()
                .map(|(unit_id, group, value)| Response { unit_id, group, value })
                .collect(),
        };
        let mut buf = Vec::new();
        write_responses(&mut buf, &table).unwrap();
        prop_assert_eq!(parse_responses(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn transaction_tables_roundtrip(
        rows in prop::collection::vec((ident(), ident(), finite()), 1..40),
        with_products in any::<bool>(),
    ) {
        let records = ClusteredRecords::new(
            rows.into_iter()
                .map(|(u, p, v)| ClusteredRecord::new(u, with_products.then_some(p), v))
                .collect(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_transactions(&mut buf, &records).unwrap();
        prop_assert_eq!(parse_transactions(buf.as_slice()).unwrap(), records);
    }
}

#[test]
fn empty_data_section_is_rejected() {
    for parsed in [
        parse_checkpoints(HEADER.as_bytes()).map(|_| ()),
        parse_responses("unit_id,group,value\n".as_bytes()).map(|_| ()),
        parse_transactions("user_id,value\n".as_bytes()).map(|_| ()),
    ] {
        let err = parsed.unwrap_err();
        assert!(matches!(err, DataError::Empty));
        assert_eq!(err.to_string(), "no rows");
    }
}

#[test]
fn decreasing_count_names_the_row() {
    let text = format!("{HEADER}e,a,m,0,10,1,1\ne,b,m,0,10,1,1\ne,a,m,1,9,1,1\n");
    let err = parse_checkpoints(text.as_bytes()).unwrap_err();
    match err {
        DataError::Row { row, line, .. } => assert_eq!((row, line), (3, 4)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn repeated_time_index_is_rejected() {
    let text = format!("{HEADER}e,a,m,1,10,1,1\ne,a,m,1,12,1,1\n");
    let err = parse_checkpoints(text.as_bytes()).unwrap_err();
    assert!(err.to_string().contains("row 2"), "{err}");
}

#[test]
fn header_must_match_exactly() {
    let text =
        "experiment,variant_id,metric_id,time_index,count_c,mean_c,variance_c\ne,a,m,0,1,1,1\n";
    assert!(matches!(
        parse_checkpoints(text.as_bytes()),
        Err(DataError::Header { .. })
    ));
    assert!(matches!(
        parse_responses("".as_bytes()),
        Err(DataError::Header { .. })
    ));
    assert!(matches!(
        parse_transactions("user,value\nu,1\n".as_bytes()),
        Err(DataError::Header { .. })
    ));
}

#[test]
fn non_numeric_fields_name_the_row() {
    let err = parse_responses("unit_id,group,value\nu,a,1\nu,a,1,5\n".as_bytes()).unwrap_err();
    assert!(err.to_string().starts_with("row 2 (line 3)"), "{err}");
    let err = parse_responses("unit_id,group,value\nu,a,1\nu,a,x\n".as_bytes()).unwrap_err();
    assert!(
        err.to_string().contains("row 2") && err.to_string().contains("'x'"),
        "{err}"
    );
    let err = parse_transactions("user_id,value\nu,NaN\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("row 1"), "{err}");
    let text = format!("{HEADER}e,a,m,0,-3,1,1\n");
    assert!(parse_checkpoints(text.as_bytes())
        .unwrap_err()
        .to_string()
        .contains("count_c"));
    let text = format!("{HEADER}e,a,m,0,3,1,-1\n");
    assert!(parse_checkpoints(text.as_bytes())
        .unwrap_err()
        .to_string()
        .contains("negative"));
}

#[test]
fn mixed_product_columns_are_an_integrity_error() {
    let err = parse_transactions("user_id,product_id,value\nu,p,1\nu,,2\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("row 2"), "{err}");
}

#[test]
fn two_sample_monitors_need_two_variants() {
    let text = format!("{HEADER}e,a,m,0,10,1,1\ne,b,m,0,10,1,1\ne,c,m,0,10,1,1\n");
    let set = parse_checkpoints(text.as_bytes()).unwrap();
    assert!(set[0]
        .to_checkpoints()
        .unwrap_err()
        .to_string()
        .contains("3 variants"));
    let text = format!("{HEADER}e,a,m,0,10,1,1\ne,b,m,1,10,1,1\n");
    let set = parse_checkpoints(text.as_bytes()).unwrap();
    assert!(set[0].to_checkpoints().is_err());
}

#[test]
fn scenario_roundtrip_and_defaults() {
    let text = "n0 = 1000\nn1 = 2000\nn2 = 2000\nn3 = 3000\n\
        mu_C0 = 1.0\nmu_C1 = 1\nmu_C2 = 1.1\nmu_C3 = 0.9\nmu_I1 = 1.2\nmu_I2 = 1.15\nmu_Iphi = 1\nmu_Ipsi = 1.05\n\
        var_C0 = 2\nvar_C1 = 2\nvar_C2 = 2\nvar_C3 = 2\nvar_I1 = 2\nvar_I2 = 2\nvar_Iphi = 2\nvar_Ipsi = 2\n";
    let s = parse_scenario(text).unwrap();
    assert_eq!((s.alpha, s.power_target), (0.05, 0.8));
    assert_eq!(parse_scenario(&write_scenario(&s)).unwrap(), s);
    let err = parse_scenario(&format!("{text}bogus = 1\n")).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    let err = parse_scenario(&text.replace("var_Ipsi = 2", "var_Ipsi = -2")).unwrap_err();
    assert!(err.to_string().contains("scenario"), "{err}");
}
