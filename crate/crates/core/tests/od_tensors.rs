use chrono::NaiveDate;
use pvcgn::ingest::{bin_ridership, gen_synthetic, AfcRecord, ServiceCalendar, ServiceWindow, StationIndex, SynthProfile};
use pvcgn::od::{build_complete, build_incomplete, build_schema, OdDataset, OD_SLOTS};

fn at(h: u32, m: u32) -> i64 {
    NaiveDate::from_ymd_opt(2019, 1, 7).unwrap().and_hms_opt(h, m, 0).unwrap().and_utc().timestamp()
}

/// One origin, one bin: 385 passengers entered between 08:00 and 08:15 and
/// 244 of them had exited by 08:15.
#[test]
fn finished_trips_fixture() {
    let index = StationIndex::new((0..14).map(|i| format!("S{i}")).collect()).unwrap();
    let mut records = Vec::new();
    for k in 0..385u32 {
        let entry = at(8, 0) + i64::from(k) * 2;
        let exit = if k < 244 { at(8, 15) - i64::from(k % 60) } else { at(8, 16) + i64::from(k) };
        let dest = 1 + (k as usize % 13);
        records.push(AfcRecord {
            passenger_id: format!("p{k}"),
            entry_station: 0,
            exit_station: dest,
            entry_time: entry,
            exit_time: exit,
        });
    }
    let cal = ServiceCalendar::daily(
        NaiveDate::from_ymd_opt(2019, 1, 7).unwrap(),
        1,
        ServiceWindow { open_minute: 480, close_minute: 540 },
    );
    let schema = build_schema(&records, &index).unwrap();
    let inc = build_incomplete(&records, &schema, 15, &cal).unwrap();
    let com = build_complete(&records, &schema, 15, &cal).unwrap();
    let sum = |t: &pvcgn::ingest::RidershipTensor| (0..OD_SLOTS).map(|s| t.get(0, 0, s)).sum::<f64>();
    assert_eq!(sum(&inc), 244.0);
    assert_eq!(sum(&com), 385.0);
    // 13 destinations: ten named slots plus three in the remainder
    assert_eq!(schema.destinations[0].len(), 10);
    assert_eq!(com.get(0, 0, 10), (0..385).filter(|k| k % 13 >= 10).count() as f64);
}

#[test]
fn synthetic_od_is_consistent_with_station_counts() {
    let data = gen_synthetic(9, 2, 3, &SynthProfile { base_volume: 10.0, ..Default::default() }).unwrap();
    let cal = ServiceCalendar::daily(SynthProfile::default().start_date, 2, ServiceWindow::default());
    let schema = build_schema(&data.records, &data.index).unwrap();
    assert_eq!(schema, build_schema(&data.records, &data.index).unwrap());
    let od = OdDataset::build(&data.records, &schema, 15, &cal).unwrap();
    let (flows, _) = bin_ridership(&data.records, &data.index, 15, &cal).unwrap();
    let mut strict = 0;
    for t in 0..od.targets.n_bins() {
        for o in 0..9 {
            let mut row = 0.0;
            for s in 0..OD_SLOTS {
                let (a, b) = (od.inputs.get(t, o, s), od.targets.get(t, o, s));
                assert!(a <= b);
                strict += usize::from(a < b);
                row += b;
            }
            assert_eq!(row, flows.get(t, o, 0));
        }
    }
    assert!(strict > 0);
}
