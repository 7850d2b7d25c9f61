mod common;

use std::fs;

use common::{random_sequence, scan};
use evkit::store::{self, import_csv, read_all, write_sequence, Codec, ContainerProps, Stride, WriteOptions};
use evkit::{Error, EventStream, FlowField, GraySequence, SensorProps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn round_trip_every_codec_and_chunk_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    for (k, codec) in Codec::ALL.into_iter().cycle().take(12).enumerate() {
        let n = [0, 1, 7, 5_000][k % 4];
        let seq = random_sequence(&mut rng, n, k % 2 == 0);
        let path = dir.path().join(format!("c{k}"));
        let chunk = [1, 3, 1000, 65_536][k % 4];
        write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, &path, WriteOptions::new(codec, chunk)).unwrap();
        let reader = store::open(&path).unwrap();
        let (e, g, f) = read_all(&reader).unwrap();
        assert_eq!(e, seq.events);
        assert_eq!(g, seq.grays);
        assert_eq!(f, seq.flows);
        assert_eq!(reader.props(), &seq.props);
    }
}

#[test]
fn time_slices_match_scan_and_touch_few_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().unwrap();
    let seq = random_sequence(&mut rng, 20_000, true);
    let chunk = 512;
    write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, dir.path(), WriteOptions::new(Codec::Deflate, chunk)).unwrap();
    let reader = store::open(dir.path()).unwrap();
    let d = reader.duration_ms();
    for _ in 0..200 {
        let a = rng.gen_range(0..d);
        let b = rng.gen_range(a + 1..=d);
        reader.reset_chunk_counter();
        let s = reader.slice_by_time(a, b).unwrap();
        let r = scan(&seq.events.ts, a as i64 * 1000, b as i64 * 1000);
        assert_eq!(s.first_index, r.start);
        assert_eq!(s.events, seq.events.slice(r.clone()));
        let bound = r.len().div_ceil(chunk as usize) as u64 + 1;
        assert!(reader.chunks_decompressed() <= bound);
    }
}

#[test]
fn index_and_gray_slices_match_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    let seq = random_sequence(&mut rng, 8_000, true);
    write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, dir.path(), WriteOptions::new(Codec::Zstd, 300)).unwrap();
    let reader = store::open(dir.path()).unwrap();
    for _ in 0..100 {
        let i0 = rng.gen_range(0..8_000);
        let i1 = rng.gen_range(i0 + 1..=8_000);
        let s = reader.slice_by_event_index(i0, i1).unwrap();
        assert_eq!(s.events, seq.events.slice(i0..i1));
        let g0 = s.gray_start.map(|g| g.index as i64).unwrap_or(-1);
        let oracle = seq.grays.ts.iter().filter(|&&t| t <= seq.events.ts[i0]).count() as i64 - 1;
        assert_eq!(g0, oracle);
    }
    let n_gray = seq.grays.len();
    for _ in 0..50 {
        let g0 = rng.gen_range(0..n_gray - 1);
        let g1 = rng.gen_range(g0 + 1..n_gray);
        let s = reader.slice_by_gray_index(g0, g1).unwrap();
        let r = scan(&seq.events.ts, seq.grays.ts[g0], seq.grays.ts[g1]);
        assert_eq!(s.events, seq.events.slice(r));
        assert_eq!(s.gray_start.unwrap().image, seq.grays.frames[g0]);
        assert_eq!(s.gray_end.unwrap().image, seq.grays.frames[g1]);
    }
}

#[test]
fn maps_match_binary_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dir = tempfile::tempdir().unwrap();
    for k in 0..5 {
        let seq = random_sequence(&mut rng, 3_000, true);
        let path = dir.path().join(k.to_string());
        write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, &path, WriteOptions::default()).unwrap();
        let maps = store::open(&path).unwrap().maps().clone();
        let ts = &seq.events.ts;
        for (m, &i) in maps.time_to_event.iter().enumerate() {
            assert_eq!(i as usize, ts.partition_point(|&t| t < m as i64 * 1000));
        }
        for (m, &i) in maps.time_to_gray.iter().enumerate() {
            assert_eq!(i as usize, seq.grays.ts.partition_point(|&t| t < m as i64 * 1000));
        }
        let starts: Vec<i64> = seq.flows.iter().map(|f| f.t0).collect();
        for (i, &t) in ts.iter().enumerate() {
            assert_eq!(maps.event_to_gray[i], seq.grays.ts.partition_point(|&g| g <= t) as i64 - 1);
            assert_eq!(maps.event_to_flow[i], starts.partition_point(|&s| s <= t) as i64 - 1);
        }
    }
}

#[test]
fn iteration_covers_every_event_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = tempfile::tempdir().unwrap();
    let seq = random_sequence(&mut rng, 4_000, true);
    write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, dir.path(), WriteOptions::new(Codec::None, 100)).unwrap();
    let reader = store::open(dir.path()).unwrap();
    for stride in [Stride::Events(333), Stride::Millis(7)] {
        let it = reader.iterate(stride).unwrap();
        let total = it.total();
        let slices: Vec<_> = it.collect::<evkit::Result<_>>().unwrap();
        assert_eq!(slices.len(), total);
        let mut all = EventStream::default();
        for s in &slices {
            all.extend_from(&s.events);
        }
        assert_eq!(all, seq.events);
    }
}

#[test]
fn corrupted_chunk_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dir = tempfile::tempdir().unwrap();
    let seq = random_sequence(&mut rng, 2_000, false);
    write_sequence(&seq.events, &seq.grays, &seq.flows, &seq.props, dir.path(), WriteOptions::new(Codec::None, 500)).unwrap();
    let file = dir.path().join("events.bin");
    let mut bytes = fs::read(&file).unwrap();
    let k = bytes.len() - 100;
    bytes[k] ^= 0xff;
    fs::write(&file, bytes).unwrap();
    let reader = store::open(dir.path()).unwrap();
    assert!(matches!(reader.read_events(0..2_000), Err(Error::ChunkChecksum { .. })));
}

#[test]
fn missing_flow_gives_none() {
    let dir = tempfile::tempdir().unwrap();
    let mut events = EventStream::default();
    for i in 0..100 {
        events.push(0, 0, i * 100, true);
    }
    write_sequence(&events, &GraySequence::default(), &[], &ContainerProps::new(SensorProps::with_size(2, 2)), dir.path(), WriteOptions::default()).unwrap();
    let reader = store::open(dir.path()).unwrap();
    let s = reader.slice_by_time(0, 5).unwrap();
    assert_eq!(s.events.len(), 50);
    assert!(s.flow.is_none() && s.gray_start.is_none());
}

#[test]
fn invalid_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let events = EventStream::new(vec![5], vec![0], vec![0], vec![true]);
    let err = write_sequence(&events, &GraySequence::default(), &[], &ContainerProps::new(SensorProps::with_size(4, 4)), &path, WriteOptions::default());
    assert!(err.is_err());
    assert!(!path.join("events.bin").exists());
}

#[test]
fn csv_import_matches_direct_write() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("events.csv");
    fs::write(&csv, "t_us,x,y,p\n0,1,1,1\n10,2,0,0\n10,3,3,-1\n2500,0,2,1\n").unwrap();
    let gray_dir = dir.path().join("gray");
    fs::create_dir(&gray_dir).unwrap();
    for t in [0, 1000, 2000] {
        let img = ndarray::Array2::from_elem((4, 4), (t / 10) as u8);
        let file = fs::File::create(gray_dir.join(format!("{t}.png"))).unwrap();
        let mut enc = png::Encoder::new(file, 4, 4);
        enc.set_color(png::ColorType::Grayscale);
        enc.write_header().unwrap().write_image_data(img.as_slice().unwrap()).unwrap();
    }
    let flows = dir.path().join("flows.json");
    let u = vec![1.0; 16];
    let v = vec![0.0; 16];
    fs::write(&flows, serde_json::json!({"convention": "forward", "fields": [{"t0": 0, "t1": 2600, "u": u, "v": v}]}).to_string()).unwrap();
    let props = dir.path().join("props.json");
    fs::write(&props, r#"{"width": 4, "height": 4, "gray_rate_hz": 1000.0, "flow_rate_hz": 400.0}"#).unwrap();
    let out = dir.path().join("out");
    import_csv(&csv, Some(&gray_dir), Some(&flows), &props, &out, WriteOptions::default()).unwrap();
    let reader = store::open(&out).unwrap();
    let (events, grays, fl) = read_all(&reader).unwrap();
    assert_eq!(events.ts, vec![0, 10, 10, 2500]);
    assert_eq!(events.ps, vec![true, false, false, true]);
    assert_eq!(grays.ts, vec![0, 1000, 2000]);
    assert_eq!(fl, vec![FlowField::constant((4, 4), 1.0, 0.0, 0, 2600)]);
}
