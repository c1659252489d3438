//! The timed benchmark loops must not touch the heap.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use cachepuzzle::bench::{Fixture, GeneratorBench, Scope};
use cachepuzzle::crypto::{derive_initial_counter, encrypt_chunk, InitialCounter, SessionKey};
use cachepuzzle::puzzle::{generate_challenge, solve_challenge};
use cachepuzzle::PuzzleParams;

struct Counting;

static ALLOCATIONS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCATIONS.fetch_add(1, Ordering::SeqCst);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCATIONS.fetch_add(1, Ordering::SeqCst);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn allocations_during(f: impl FnOnce()) -> usize {
    let before = ALLOCATIONS.load(Ordering::SeqCst);
    f();
    ALLOCATIONS.load(Ordering::SeqCst) - before
}

// One test function so no other test thread allocates concurrently.
#[test]
fn hot_loops_do_not_allocate() {
    let params = PuzzleParams::new(4, 3, 4096, 16).unwrap();
    for scope in [Scope::Challenge, Scope::Request] {
        for fixture in [Fixture::Warm, Fixture::Rotating] {
            let mut bench = GeneratorBench::new(params, fixture, scope, 1).unwrap();
            bench.run(5).unwrap();
            let n = allocations_during(|| {
                bench.run(200).unwrap();
            });
            assert_eq!(n, 0, "generator {scope}/{fixture} allocated {n} times");
        }
    }

    let keys: Vec<SessionKey> = (0..4u8).map(|i| SessionKey([i; 16])).collect();
    let counters: Vec<InitialCounter> = keys.iter().map(derive_initial_counter).collect();
    let chunks: Vec<Vec<u8>> = (0..4u8).map(|i| vec![i.wrapping_mul(37); 4096]).collect();
    let (challenge, solution) =
        generate_challenge(&chunks, &keys, &counters, &params, 200).unwrap();
    let enc: Vec<Vec<u8>> = chunks
        .iter()
        .zip(&keys)
        .zip(&counters)
        .map(|((c, k), i)| encrypt_chunk(k, *i, c))
        .collect();
    let mut solved = None;
    let n = allocations_during(|| {
        solved = Some(solve_challenge(&enc, &challenge, &params));
    });
    assert_eq!(solved.unwrap().unwrap(), solution);
    assert_eq!(n, 0, "solver allocated {n} times");
}
