//! Bounded fan-out for independent backend calls.

/// Apply `f` to every item with at most `max_in_flight` worker threads,
/// returning results in input order. `max_in_flight <= 1` runs inline.
pub fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if max_in_flight <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let workers = max_in_flight.min(items.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let slots_mutex = std::sync::Mutex::new(&mut slots);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots_mutex.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });

    slots
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
