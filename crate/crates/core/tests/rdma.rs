use bytes::Bytes;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usdaq_core::rdma::{ChannelModel, CompletionStatus, Fabric, WorkRequest};

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Bytes {
    let mut v = vec![0u8; len];
    rng.fill(&mut v[..]);
    v.into()
}

/// Posts `sizes` as back-to-back WRITEs in batches of `batch`, returning
/// the expected remote image and the remote image actually produced.
fn transfer(model: ChannelModel, sizes: &[usize], batch: usize, seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u64>, Fabric) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = sizes.iter().sum();
    let mut f = Fabric::with_channel(model).unwrap();
    let mr = f.connect(total).unwrap();
    let mut expect = Vec::with_capacity(total);
    let mut wrs = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let data = random_bytes(&mut rng, n);
        wrs.push(WorkRequest::write(i as u64, mr.rkey, expect.len() as u64, data.clone()));
        expect.extend_from_slice(&data);
    }
    let mut order = Vec::new();
    for chunk in wrs.chunks(batch) {
        assert_eq!(f.a.post_batch(chunk.to_vec()).unwrap(), chunk.len());
        let limit = f.now() + 10.0;
        for c in f.wait_completions(chunk.len(), limit).unwrap() {
            assert_eq!(c.status, CompletionStatus::Success);
            order.push(c.wr_id);
        }
    }
    let remote = f.b.region(mr.rkey).unwrap().to_vec();
    (expect, remote, order, f)
}

#[test]
fn one_percent_loss_with_reordering() {
    let model = ChannelModel { loss_probability: 0.01, reorder: true, seed: 2024, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sizes: Vec<usize> = (0..300).map(|_| rng.random_range(1..40_000)).collect();
    let (expect, remote, order, f) = transfer(model, &sizes, 16, 9);
    assert_eq!(remote, expect);
    assert_eq!(order, (0..300).collect::<Vec<_>>());
    assert!(f.a.stats().retransmitted_packets > 0);
}

#[test]
fn duplicates_applied_once() {
    // every packet is delivered twice, the copy up to 20 µs late, so
    // replaying the first WRITE would clobber the second one's bytes
    let model = ChannelModel { duplicate_probability: 1.0, jitter: 20e-6, seed: 4, ..Default::default() };
    let mut f = Fabric::with_channel(model).unwrap();
    let mr = f.connect(3 * 4096).unwrap();
    let old = Bytes::from(vec![0xAA; 3 * 4096]);
    let new = Bytes::from(vec![0x55; 3 * 4096]);
    f.a.post_batch(vec![WorkRequest::write(1, mr.rkey, 0, old), WorkRequest::write(2, mr.rkey, 0, new.clone())])
        .unwrap();
    let c = f.wait_completions(2, 1.0).unwrap();
    assert!(c.iter().all(|c| c.status == CompletionStatus::Success));
    f.advance_to(f.now() + 100e-6).unwrap();
    assert_eq!(f.b.region(mr.rkey).unwrap(), &new[..]);
    assert!(f.b.stats().duplicates_received >= 6);
    assert_eq!(f.a.stats().payload_bytes_acked, 6 * 4096);
}

#[test]
fn batch_of_one_matches_single_batch() {
    let sizes = [10_000, 4096, 1, 99_999];
    let (e1, r1, _, _) = transfer(ChannelModel::default(), &sizes, 1, 5);
    let (e4, r4, _, _) = transfer(ChannelModel::default(), &sizes, 4, 5);
    assert_eq!(e1, e4);
    assert_eq!(r1, r4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exactly_once_under_faults(
        sizes in prop::collection::vec(1usize..20_000, 1..12),
        loss in 0.0f64..0.15,
        dup in 0.0f64..0.2,
        reorder: bool,
        seed: u64,
        batch in 1usize..6,
    ) {
        let model = ChannelModel { loss_probability: loss, duplicate_probability: dup, reorder, seed, mtu: 1024, ..Default::default() };
        let (expect, remote, order, f) = transfer(model, &sizes, batch, seed);
        prop_assert_eq!(remote, expect);
        prop_assert_eq!(order, (0..sizes.len() as u64).collect::<Vec<_>>());
        let s = f.a.stats();
        prop_assert!(s.payload_bytes_acked <= s.payload_bytes_sent);
    }
}
