use std::fs;

use evkit::store::{self, write_sequence, ContainerProps, Stride, WriteOptions};
use evkit::viz::{export_events_csv, export_sequence, read_png, ExportKind};
use evkit::{EventStream, FlowField, GraySequence, SensorProps};
use ndarray::Array2;

fn container(dir: &std::path::Path) -> store::Reader {
    let mut events = EventStream::default();
    for i in 0..1000i64 {
        events.push((i % 16) as u16, (i / 16 % 12) as u16, i * 100, i % 3 == 0);
    }
    let grays = GraySequence::new(
        (0..=10).map(|k| Array2::from_elem((12, 16), 20 * k as u8)).collect(),
        (0..=10).map(|k| k * 10_000).collect(),
    );
    let flows: Vec<_> = (0..10).map(|k| FlowField::zeros((12, 16), k * 10_000, (k + 1) * 10_000)).collect();
    let sensor = SensorProps {
        gray_rate_hz: 100.0,
        flow_rate_hz: 100.0,
        ..SensorProps::with_size(16, 12)
    };
    write_sequence(&events, &grays, &flows, &ContainerProps::new(sensor), dir, WriteOptions::default()).unwrap();
    store::open(dir).unwrap()
}

#[test]
fn one_numbered_png_per_slice() {
    let dir = tempfile::tempdir().unwrap();
    let reader = container(&dir.path().join("c"));
    let out = dir.path().join("overlay");
    let files = export_sequence(&reader, Stride::GrayFrames(1), &out, ExportKind::Overlay).unwrap();
    assert_eq!(files.len(), 10);
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let expected: Vec<_> = (0..10).map(|i| format!("{i:06}.png")).collect();
    assert_eq!(names, expected);
}

#[test]
fn re_export_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let reader = container(&dir.path().join("c"));
    for kind in [ExportKind::Overlay, ExportKind::Flow, ExportKind::Encoded] {
        let a = export_sequence(&reader, Stride::Millis(25), dir.path().join("a"), kind).unwrap();
        let b = export_sequence(&reader, Stride::Millis(25), dir.path().join("b"), kind).unwrap();
        assert_eq!(a.len(), reader.iterate(Stride::Millis(25)).unwrap().total());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}

#[test]
fn zero_flow_renders_white() {
    let dir = tempfile::tempdir().unwrap();
    let reader = container(&dir.path().join("c"));
    let files = export_sequence(&reader, Stride::GrayFrames(2), dir.path().join("flow"), ExportKind::Flow).unwrap();
    assert_eq!(files.len(), 5);
    for f in files {
        assert!(read_png(f).unwrap().iter().all(|&c| c == 255));
    }
}

#[test]
fn events_csv_round_trips_through_import() {
    let dir = tempfile::tempdir().unwrap();
    let reader = container(&dir.path().join("c"));
    let events = reader.read_events(0..reader.len()).unwrap();
    let csv = dir.path().join("events.csv");
    export_events_csv(&events, &csv).unwrap();
    let parsed = evkit::store::parse_events_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(parsed, events);
}
