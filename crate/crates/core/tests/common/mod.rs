//! Loopback deployment: one publisher and a set of caches on 127.0.0.1.

#![allow(dead_code)]

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;

use cachepuzzle::crypto::MasterKey;
use cachepuzzle::protocol::{
    CacheNode, Client, ContentObject, ContentStore, Handler, Message, Publisher, Registry, Server,
};
use cachepuzzle::PuzzleParams;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Deployment {
    pub params: PuzzleParams,
    pub registry: Registry,
    pub secret: MasterKey,
    pub objects: Vec<(String, Vec<u8>)>,
    pub publisher: Option<Server>,
    pub publisher_addr: SocketAddr,
    pub caches: Vec<Option<Server>>,
}

pub fn store_for(params: &PuzzleParams, objects: &[(String, Vec<u8>)]) -> ContentStore {
    let mut store = ContentStore::new();
    for (id, bytes) in objects {
        store.insert(ContentObject::from_bytes(
            id.clone(),
            bytes,
            params.chunk_size,
            params.n,
        ));
    }
    store
}

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

fn serve<F>(listener: TcpListener, f: F) -> Server
where
    F: Fn(Message, SocketAddr) -> Message + Send + Sync + 'static,
{
    let handler: Handler = Arc::new(f);
    Server::spawn(listener, handler).unwrap()
}

impl Deployment {
    /// Starts `caches` honest caches and a publisher. Cache `i` uses
    /// master key `[i + 1; 32]`.
    pub fn start(params: PuzzleParams, caches: usize, objects: Vec<(String, Vec<u8>)>) -> Self {
        let listeners: Vec<TcpListener> = (0..caches)
            .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
            .collect();
        let mut registry = Registry::new();
        for (i, l) in listeners.iter().enumerate() {
            registry
                .register(
                    i as u32 + 1,
                    l.local_addr().unwrap().to_string(),
                    MasterKey([i as u8 + 1; 32]),
                )
                .unwrap();
        }
        let cache_servers = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let node = CacheNode::new(
                    i as u32 + 1,
                    MasterKey([i as u8 + 1; 32]),
                    store_for(&params, &objects),
                );
                Some(serve(l, move |m, peer| node.handle(m, peer)))
            })
            .collect();
        let mut d = Self {
            params,
            registry,
            secret: MasterKey([0xA5; 32]),
            objects,
            publisher: None,
            publisher_addr: "127.0.0.1:0".parse().unwrap(),
            caches: cache_servers,
        };
        d.start_publisher(TcpListener::bind("127.0.0.1:0").unwrap());
        d
    }

    fn start_publisher(&mut self, listener: TcpListener) {
        self.publisher_addr = listener.local_addr().unwrap();
        let publisher = Publisher::new(
            self.params,
            self.registry.clone(),
            store_for(&self.params, &self.objects),
            self.secret,
        );
        self.publisher = Some(serve(listener, move |m, peer| publisher.handle(m, peer)));
    }

    /// Stops the publisher and starts a fresh instance with the same
    /// configuration on the same port.
    pub fn restart_publisher(&mut self) {
        if let Some(p) = self.publisher.take() {
            p.shutdown();
        }
        let listener = (0..50)
            .find_map(|_| {
                TcpListener::bind(self.publisher_addr).ok().or_else(|| {
                    std::thread::sleep(std::time::Duration::from_millis(100));
                    None
                })
            })
            .expect("rebind publisher port");
        self.start_publisher(listener);
    }

    /// Replaces cache `i` with a server running `f`.
    pub fn replace_cache<F>(&mut self, i: usize, f: F)
    where
        F: Fn(Message, SocketAddr) -> Message + Send + Sync + 'static,
    {
        let addr = self.registry.get(i).descriptor.address.clone();
        if let Some(s) = self.caches[i].take() {
            s.shutdown();
        }
        let listener = TcpListener::bind(&addr).unwrap();
        self.caches[i] = Some(serve(listener, f));
    }

    pub fn stop_cache(&mut self, i: usize) {
        if let Some(s) = self.caches[i].take() {
            s.shutdown();
        }
    }

    pub fn client(&self) -> Client {
        Client::new(self.publisher_addr.to_string())
    }
}
