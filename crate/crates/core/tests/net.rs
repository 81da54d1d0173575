use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wpir::net::{
    client_retrieve, decode_query, encode_query, read_frame, write_frame, Client, Incoming, Reason,
    Server, ServerHandle, MAX_FRAME,
};
use wpir::optimizer::maxl_optimal;
use wpir::{
    answer, enumerate_key_space, uniform_coded, Error, MessageStore, Query, RandomKey, SystemParams,
};

fn cluster(p: &SystemParams, seed: u64) -> (MessageStore, Vec<ServerHandle>, Vec<String>) {
    let store = MessageStore::random(p, &mut ChaCha8Rng::seed_from_u64(seed));
    let handles: Vec<ServerHandle> = (0..p.n())
        .map(|_| {
            Server::bind(store.clone(), "127.0.0.1:0")
                .unwrap()
                .spawn()
                .unwrap()
        })
        .collect();
    let addrs = handles.iter().map(|h| h.addr().to_string()).collect();
    (store, handles, addrs)
}

fn raw_exchange(stream: &mut TcpStream, bytes: &[u8]) -> Vec<u8> {
    stream.write_all(bytes).unwrap();
    match read_frame(stream).unwrap() {
        Incoming::Frame(p) => p,
        other => panic!("{other:?}"),
    }
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = (payload.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(payload);
    out
}

#[test]
fn query_payloads_round_trip() {
    for q in [
        Query::Vector(vec![0, 2, 1]),
        Query::Escape(3),
        Query::Vector(vec![0, 0, 0]),
    ] {
        assert_eq!(decode_query(&encode_query(&q), 3, 2), Ok(q));
    }
    assert_eq!(encode_query(&Query::Escape(1)), vec![0x01, 0x00, 0x01]);
    assert_eq!(decode_query(&[], 2, 2), Err(Reason::Truncated));
    assert_eq!(decode_query(&[0x00, 1], 2, 2), Err(Reason::Truncated));
    assert_eq!(decode_query(&[0x01, 0], 2, 2), Err(Reason::Truncated));
    assert_eq!(decode_query(&[0x07, 0, 0], 2, 2), Err(Reason::UnknownType));
    assert_eq!(decode_query(&[0x00, 3, 0], 2, 2), Err(Reason::BadValue));
    assert_eq!(decode_query(&[0x01, 0, 3], 2, 2), Err(Reason::BadValue));
}

#[test]
fn frames_reject_oversize_payloads() {
    let mut buf = Vec::new();
    assert!(write_frame(&mut buf, &vec![0; MAX_FRAME + 1]).is_err());
    write_frame(&mut buf, &vec![7; MAX_FRAME]).unwrap();
    assert_eq!(
        read_frame(&mut buf.as_slice()).unwrap(),
        Incoming::Frame(vec![7; MAX_FRAME])
    );
    assert_eq!(
        read_frame(&mut [0u8, 0, 0, 4, 1].as_slice()).unwrap(),
        Incoming::Truncated
    );
    assert_eq!(read_frame(&mut [].as_slice()).unwrap(), Incoming::Closed);
}

#[test]
fn server_answers_and_reports_errors() {
    let p = SystemParams::homogeneous(3, 2).unwrap();
    let (store, handles, _) = cluster(&p, 1);
    let mut s = TcpStream::connect(handles[0].addr()).unwrap();
    assert_eq!(raw_exchange(&mut s, &frame(&[0x00, 0, 0])), vec![0x00]);
    let escape = raw_exchange(&mut s, &frame(&[0x01, 0, 1]));
    assert_eq!(escape.len(), 3);
    assert_eq!(
        escape[1..],
        store.message(1).iter().map(|x| x.0).collect::<Vec<_>>()[..]
    );
    assert_eq!(raw_exchange(&mut s, &frame(&[0x00, 1])), vec![0xFF, 0x01]);
    assert_eq!(raw_exchange(&mut s, &frame(&[0x09])), vec![0xFF, 0x02]);
    assert_eq!(
        raw_exchange(&mut s, &frame(&[0x01, 0, 9])),
        vec![0xFF, 0x03]
    );
    let mut big = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
    big.extend(vec![0u8; MAX_FRAME + 1]);
    assert_eq!(raw_exchange(&mut s, &big), vec![0xFF, 0x04]);
    // The connection survives errors.
    assert_eq!(raw_exchange(&mut s, &frame(&[0x00, 0, 0])), vec![0x00]);
    // A stream cut inside a frame gets a final truncation error.
    s.write_all(&[0, 0, 0, 9, 0x00]).unwrap();
    s.shutdown(std::net::Shutdown::Write).unwrap();
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert_eq!(rest, frame(&[0xFF, 0x01]));
}

#[test]
fn network_answers_match_in_process() {
    let p = SystemParams::homogeneous(3, 2).unwrap();
    let (store, _handles, addrs) = cluster(&p, 2);
    let a = uniform_coded(&p).unwrap();
    let mut client = Client::connect(&addrs, Duration::from_secs(5)).unwrap();
    for key in enumerate_key_space(&p).unwrap() {
        for k in 1..=2 {
            let queries = wpir::encode_queries(k, &key, &p).unwrap();
            let remote = client.exchange(&queries, p.l()).unwrap();
            let local: Vec<_> = queries.iter().map(|q| answer(q, &store)).collect();
            assert_eq!(remote, local);
            let r = client.retrieve_with_key(k, &key, &a).unwrap();
            assert_eq!(r.message, store.message(k));
            assert_eq!(r.frames_sent, 3);
        }
    }
}

#[test]
fn loopback_uniform_tsc_retrievals() {
    let p = SystemParams::homogeneous(3, 2).unwrap();
    let (store, _handles, addrs) = cluster(&p, 3);
    let a = uniform_coded(&p).unwrap();
    let mut client = Client::connect(&addrs, Duration::from_secs(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let k = 1 + i % 2;
        let r = client.retrieve(k, &a, &mut rng).unwrap();
        assert_eq!(r.message, store.message(k));
        assert_eq!(r.frames_sent, 3);
    }
}

#[test]
fn direct_download_has_one_nonempty_answer() {
    let p = SystemParams::homogeneous(3, 2).unwrap();
    let (store, _handles, addrs) = cluster(&p, 5);
    let (a, _) = maxl_optimal(&p, 1.0).unwrap();
    for seed in 0..20 {
        let r = client_retrieve(2, &a, &addrs, seed).unwrap();
        assert_eq!(r.key, RandomKey::direct(1));
        assert_eq!(r.message, store.message(2));
        assert_eq!(r.nonempty_answers, 1);
        assert_eq!(r.frames_sent, 3);
    }
}

#[test]
fn unreachable_server_is_named() {
    let p = SystemParams::homogeneous(3, 2).unwrap();
    let (_, handles, mut addrs) = cluster(&p, 6);
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    addrs[1] = dead.clone();
    let a = uniform_coded(&p).unwrap();
    match client_retrieve(1, &a, &addrs, 0) {
        Err(Error::ConnectionFailed { endpoint, .. }) => assert_eq!(endpoint, dead),
        other => panic!("{other:?}"),
    }
    drop(handles);
}

#[test]
fn silent_server_times_out() {
    let p = SystemParams::homogeneous(2, 2).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let silent = listener.local_addr().unwrap().to_string();
    let (_, _handles, mut addrs) = cluster(&p, 7);
    addrs[0] = silent.clone();
    let a = uniform_coded(&p).unwrap();
    let mut client = Client::connect(&addrs, Duration::from_millis(200)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match client.retrieve(1, &a, &mut rng) {
        Err(Error::Timeout { endpoint }) => assert_eq!(endpoint, silent),
        other => panic!("{other:?}"),
    }
}

#[test]
fn server_shuts_down_on_request() {
    let p = SystemParams::homogeneous(2, 2).unwrap();
    let store = MessageStore::random(&p, &mut ChaCha8Rng::seed_from_u64(0));
    let h = Server::bind(store, "127.0.0.1:0").unwrap().spawn().unwrap();
    let addr = h.addr();
    h.shutdown();
    assert!(TcpStream::connect_timeout(&addr, Duration::from_millis(200)).is_err());
}
