use edar_nn::io::{read_entries, write_entries, WeightEntry};
use edar_nn::{load_weights, save_weights, GraphBuilder, LayerGraph, NnError, Shape, Tensor};
use proptest::prelude::*;

fn net(seed: u64) -> LayerGraph {
    let mut b = GraphBuilder::new();
    let x = b.input("x", Shape::Map { channels: 1, size: None });
    let c = b.conv("enc", x, 3, 3).unwrap();
    let a = b.leaky_relu("act", c, 0.01);
    let d = b.depthwise("dw", a, 3).unwrap();
    let o = b.conv("head", d, 2, 1).unwrap();
    b.build(o, seed).unwrap()
}

#[test]
fn header_layout_is_exact() {
    let entries = vec![WeightEntry {
        name: "ab".into(),
        dims: vec![2],
        data: vec![1.0, -2.5],
    }];
    let mut buf = Vec::new();
    write_entries(&mut buf, &entries).unwrap();
    let mut expect = Vec::new();
    expect.extend_from_slice(b"EDAR");
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&2u16.to_le_bytes());
    expect.extend_from_slice(b"ab");
    expect.push(1);
    expect.extend_from_slice(&2u32.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(buf, expect);
}

#[test]
fn save_load_is_bit_exact_for_inference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.edar");
    let mut a = net(11);
    a.round_params_to_f32();
    save_weights(&a, &path, &[WeightEntry::tag("network:test-v1")]).unwrap();
    let mut b = net(99);
    let extra = load_weights(&mut b, &path).unwrap();
    assert_eq!(extra, vec![WeightEntry::tag("network:test-v1")]);
    for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
        let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by);
    }
    let input = Tensor::from_vec(&[1, 1, 4, 5], (0..20).map(|v| v as f64 / 19.0).collect()).unwrap();
    assert_eq!(a.forward(&[&input]).unwrap(), b.forward(&[&input]).unwrap());

    // Saving the reloaded graph reproduces the file byte for byte.
    let again = dir.path().join("w2.edar");
    save_weights(&b, &again, &[WeightEntry::tag("network:test-v1")]).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn load_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.edar");
    save_weights(&net(1), &path, &[]).unwrap();

    let mut b = GraphBuilder::new();
    let x = b.input("x", Shape::Map { channels: 1, size: None });
    let c = b.conv("enc", x, 4, 3).unwrap();
    let mut other = b.build(c, 0).unwrap();
    assert!(matches!(load_weights(&mut other, &path), Err(NnError::Format(_))));

    let bytes = std::fs::read(&path).unwrap();
    assert!(read_entries(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_entries(bad.as_slice()).is_err());
}

proptest! {
    #[test]
    fn entries_round_trip(
        names in proptest::collection::vec("[a-z.:_0-9]{1,12}", 1..5),
        seed in any::<u64>(),
    ) {
        let mut s = seed;
        let entries: Vec<WeightEntry> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let dims = vec![i + 1, 2];
                let data = (0..2 * (i + 1))
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        f32::from_bits((s >> 32) as u32 & 0x7f7f_ffff)
                    })
                    .collect();
                WeightEntry { name: n.clone(), dims, data }
            })
            .collect();
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).unwrap();
        let back = read_entries(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for (a, b) in back.iter().zip(&entries) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.dims, &b.dims);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(ab, bb);
        }
    }
}
