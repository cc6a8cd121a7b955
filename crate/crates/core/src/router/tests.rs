use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use super::*;
use crate::clock::{SimClock, SystemClock};

fn router() -> Router {
    Router::new(Arc::new(SimClock::default()), RouterConfig::default())
}

fn noop() -> Arc<dyn Handler> {
    Arc::new(|_: &Event| Ok(()))
}

/// Handler recording the seq of everything it sees.
fn recorder() -> (Arc<dyn Handler>, Arc<Mutex<Vec<u64>>>) {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = seen.clone();
    let h: Arc<dyn Handler> = Arc::new(move |e: &Event| {
        s.lock().unwrap().push(e.seq);
        Ok(())
    });
    (h, seen)
}

#[test]
fn register_and_reject_duplicates() {
    let r = router();
    let id = r.register_agent("reporting", noop()).unwrap();
    assert_eq!(id.as_str(), "reporting");
    assert_eq!(
        r.register_agent("reporting", noop()),
        Err(RouterError::DuplicateAgent("reporting".into()))
    );
    assert!(matches!(
        r.register_agent("router", noop()),
        Err(RouterError::DuplicateAgent(_))
    ));
    assert_eq!(r.register_agent("", noop()), Err(RouterError::EmptyAgentName));
}

#[test]
fn four_agent_roles_are_distinct() {
    let r = router();
    let ids: BTreeSet<_> = ["vision", "reporting", "communication", "control"]
        .iter()
        .map(|n| r.register_agent(n, noop()).unwrap())
        .collect();
    assert_eq!(ids.len(), 4);
}

#[test]
fn subscribe_errors() {
    let r = router();
    let rep = r.register_agent("reporting", noop()).unwrap();
    let com = r.register_agent("communication", noop()).unwrap();
    r.subscribe(&rep, SNAPSHOT, DeliveryMode::Background).unwrap();
    r.subscribe(&com, REPORT, DeliveryMode::Inline).unwrap();
    assert!(matches!(
        r.subscribe(&rep, SNAPSHOT, DeliveryMode::Inline),
        Err(RouterError::DuplicateSubscription { .. })
    ));
    assert!(matches!(
        r.subscribe(&rep, "bogus", DeliveryMode::Inline),
        Err(RouterError::UnknownEventType(_))
    ));
    assert!(matches!(
        r.subscribe(&AgentId::new("ghost"), REPORT, DeliveryMode::Inline),
        Err(RouterError::UnknownAgent(_))
    ));
}

#[test]
fn make_event_validates() {
    let r = router();
    let ev = r
        .make_event(
            REPORT,
            payload([
                ("path", PayloadValue::Path("snap_1_1.png".into())),
                ("caption", "hello".into()),
            ]),
        )
        .unwrap();
    assert_eq!(ev.event_type, "report");
    assert_eq!(ev.seq, 0);
    assert_eq!(ev.text("caption"), Some("hello"));
    assert!(r.make_event(SNAPSHOT, Payload::new()).unwrap().payload.is_empty());
    assert_eq!(
        r.make_event("bogus", Payload::new()),
        Err(RouterError::UnknownEventType("bogus".into()))
    );
    for bad in ["/etc/passwd", "../x.png", ""] {
        let p = payload([("path", PayloadValue::Path(PathBuf::from(bad)))]);
        assert!(matches!(
            r.make_event(SNAPSHOT, p),
            Err(RouterError::InvalidPayloadValue { .. })
        ));
    }
    let p = payload([("x", f64::NAN)]);
    assert!(r.make_event(STATUS, p).is_err());
}

#[test]
fn single_and_double_fanout() {
    let r = router();
    let (h1, seen1) = recorder();
    let (h2, seen2) = recorder();
    let a = r.register_agent("a", h1).unwrap();
    let b = r.register_agent("b", h2).unwrap();
    let v = r.register_agent("vision", noop()).unwrap();
    r.subscribe(&a, SNAPSHOT, DeliveryMode::Inline).unwrap();
    let pubr = r.publisher(&v);
    pubr.publish(SNAPSHOT, Payload::new()).unwrap();
    r.dispatch_pending();
    assert_eq!(seen1.lock().unwrap().len(), 1);

    r.subscribe(&b, SNAPSHOT, DeliveryMode::Inline).unwrap();
    let seq = pubr.publish(SNAPSHOT, Payload::new()).unwrap();
    r.dispatch_pending();
    assert_eq!(*seen1.lock().unwrap().last().unwrap(), seq);
    assert_eq!(*seen2.lock().unwrap(), vec![seq]);
}

#[test]
fn targeted_send_reaches_only_target() {
    let r = router();
    let (h1, seen1) = recorder();
    let (h2, seen2) = recorder();
    let a = r.register_agent("a", h1).unwrap();
    let b = r.register_agent("b", h2).unwrap();
    r.subscribe(&a, STATUS, DeliveryMode::Inline).unwrap();
    r.subscribe(&b, STATUS, DeliveryMode::Inline).unwrap();
    let ev = r.make_event(STATUS, Payload::new()).unwrap();
    r.send_to_agent(&AgentId::router(), &b, ev).unwrap();
    r.dispatch_pending();
    assert!(seen1.lock().unwrap().is_empty());
    assert_eq!(seen2.lock().unwrap().len(), 1);
    let ev = r.make_event(STATUS, Payload::new()).unwrap();
    assert_eq!(
        r.send_to_agent(&a, Target::Agent(AgentId::new("nobody")), ev),
        Err(RouterError::UnknownAgent("nobody".into()))
    );
}

#[test]
fn source_and_seq_assigned_at_publish() {
    let r = router();
    let (h, _) = recorder();
    let v = r.register_agent("vision", h).unwrap();
    let captured = Arc::new(Mutex::new(Vec::new()));
    let c = captured.clone();
    r.add_observer(move |e| c.lock().unwrap().push((e.seq, e.source.to_string())));
    let p = r.publisher(&v);
    let s1 = p.publish(SNAPSHOT, Payload::new()).unwrap();
    let s2 = p.publish(STATUS, Payload::new()).unwrap();
    assert!(s2 > s1);
    r.dispatch_pending();
    assert_eq!(
        *captured.lock().unwrap(),
        vec![(s1, "vision".to_string()), (s2, "vision".to_string())]
    );
}

#[test]
fn inline_handler_sees_increasing_seq() {
    let r = router();
    let (h, seen) = recorder();
    let a = r.register_agent("a", h).unwrap();
    r.subscribe(&a, COMMAND, DeliveryMode::Inline).unwrap();
    let p = r.publisher(&a);
    for _ in 0..3 {
        p.publish(COMMAND, Payload::new()).unwrap();
    }
    assert_eq!(r.dispatch_pending(), 3);
    assert_eq!(*seen.lock().unwrap(), vec![1, 2, 3]);
}

#[test]
fn failing_and_panicking_handlers_are_isolated() {
    let r = router();
    let bad = r
        .register_agent("bad", Arc::new(|_: &Event| Err(HandlerError::new("boom"))))
        .unwrap();
    let worse = r
        .register_agent("worse", Arc::new(|_: &Event| -> Result<(), HandlerError> { panic!("kaboom") }))
        .unwrap();
    let (h, seen) = recorder();
    let good = r.register_agent("good", h).unwrap();
    r.subscribe(&bad, COMMAND, DeliveryMode::Inline).unwrap();
    r.subscribe(&good, COMMAND, DeliveryMode::Inline).unwrap();
    let p = r.publisher(&good);
    p.publish(COMMAND, Payload::new()).unwrap();
    r.dispatch_pending();
    assert_eq!(r.stats().handler_errors, 1);
    assert_eq!(seen.lock().unwrap().len(), 1);

    r.subscribe(&worse, COMMAND, DeliveryMode::Inline).unwrap();
    p.publish(COMMAND, Payload::new()).unwrap();
    p.publish(COMMAND, Payload::new()).unwrap();
    r.dispatch_pending();
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(r.stats().handler_errors, 5);
    assert_eq!(r.stats().get(COMMAND).handler_errors, 5);
}

#[test]
fn background_mailbox_overflow_is_counted() {
    let r = router();
    let dropped = Arc::new(AtomicU64::new(0));
    struct Counting(Arc<AtomicU64>);
    impl Handler for Counting {
        fn handle(&self, _: &Event) -> Result<(), HandlerError> {
            Ok(())
        }
        fn on_dropped(&self, _: &Event) {
            self.0.fetch_add(1, Ordering::Relaxed);
        }
    }
    let bg = r
        .register_agent_with_mailbox("bg", Arc::new(Counting(dropped.clone())), 1)
        .unwrap();
    r.subscribe(&bg, SNAPSHOT, DeliveryMode::Background).unwrap();
    let p = r.publisher(&bg);
    p.publish(SNAPSHOT, Payload::new()).unwrap();
    let last = p.publish(SNAPSHOT, Payload::new()).unwrap();
    r.dispatch_pending();
    assert_eq!(dropped.load(Ordering::Relaxed), 1);
    assert_eq!(r.stats().get(SNAPSHOT).dropped, 1);
    let mb = r.mailbox(&bg).unwrap();
    assert_eq!(mb.try_pop().unwrap().seq, last);
    assert!(mb.try_pop().is_none());
}

#[test]
fn queue_full_while_inline_handler_stalls() {
    let r = Router::new(
        Arc::new(SystemClock),
        RouterConfig {
            queue_capacity: 3,
            mailbox_capacity: 16,
        },
    );
    let (entered_tx, entered_rx) = mpsc::channel();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let release_rx = Mutex::new(release_rx);
    let stall = r
        .register_agent(
            "stall",
            Arc::new(move |_: &Event| {
                entered_tx.send(()).unwrap();
                release_rx.lock().unwrap().recv().unwrap();
                Ok(())
            }),
        )
        .unwrap();
    r.subscribe(&stall, COMMAND, DeliveryMode::Inline).unwrap();
    let p = r.publisher(&stall);
    let stop = StopSignal::new();
    let worker = {
        let r = r.clone();
        let stop = stop.clone();
        thread::spawn(move || r.run_dispatch(&stop))
    };
    p.publish(COMMAND, Payload::new()).unwrap();
    entered_rx.recv().unwrap();
    for _ in 0..3 {
        p.publish(COMMAND, Payload::new()).unwrap();
    }
    assert_eq!(
        p.publish(COMMAND, Payload::new()),
        Err(RouterError::QueueFull { capacity: 3 })
    );
    assert_eq!(r.stats().get(COMMAND).rejected, 1);
    for _ in 0..4 {
        release_tx.send(()).unwrap();
    }
    stop.stop();
    let stats = worker.join().unwrap();
    assert_eq!(stats.get(COMMAND).delivered, 4);
}

#[test]
fn commands_stay_live_behind_stalled_background_subscriber() {
    let r = Router::new(Arc::new(SystemClock), RouterConfig::default());
    let reporting = r.register_agent_with_mailbox("reporting", noop(), 4).unwrap();
    r.subscribe(&reporting, SNAPSHOT, DeliveryMode::Background).unwrap();
    let (tx, rx) = mpsc::channel();
    let tx = Mutex::new(tx);
    let control = r
        .register_agent(
            "vision",
            Arc::new(move |e: &Event| {
                tx.lock().unwrap().send(e.seq).unwrap();
                Ok(())
            }),
        )
        .unwrap();
    r.subscribe(&control, COMMAND, DeliveryMode::Inline).unwrap();
    let stop = StopSignal::new();
    let worker = {
        let r = r.clone();
        let stop = stop.clone();
        thread::spawn(move || r.run_dispatch(&stop))
    };
    let p = r.publisher(&control);
    // Nobody ever drains the reporting mailbox.
    for _ in 0..200 {
        p.publish(SNAPSHOT, Payload::new()).unwrap();
    }
    let sent = Instant::now();
    let seq = p.publish(COMMAND, Payload::new()).unwrap();
    assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), seq);
    assert!(sent.elapsed() < INLINE_BUDGET * 4, "{:?}", sent.elapsed());
    stop.stop();
    let stats = worker.join().unwrap();
    assert_eq!(stats.get(SNAPSHOT).dropped, 196);
    assert_eq!(r.mailbox(&reporting).unwrap().len(), 4);
}

#[test]
fn log_line_format() {
    let r = router();
    let buf = Arc::new(Mutex::new(Vec::<u8>::new()));
    struct Shared(Arc<Mutex<Vec<u8>>>);
    impl Write for Shared {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(b);
            Ok(b.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    r.set_log_sink(Box::new(Shared(buf.clone())));
    let a = r.register_agent("vision", noop()).unwrap();
    r.subscribe(&a, SNAPSHOT, DeliveryMode::Inline).unwrap();
    r.publisher(&a).publish(SNAPSHOT, Payload::new()).unwrap();
    r.dispatch_pending();
    let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
    assert_eq!(
        text,
        "ts=2026-01-01T00:00:00.000Z seq=1 type=snapshot source=vision latency_us=0 outcome=delivered\n"
    );
}

#[test]
fn dispatch_context_is_tagged() {
    let r = router();
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    let a = r
        .register_agent(
            "a",
            Arc::new(move |_: &Event| {
                f.store(in_dispatch_context(), Ordering::Relaxed);
                Ok(())
            }),
        )
        .unwrap();
    r.subscribe(&a, STATUS, DeliveryMode::Inline).unwrap();
    r.publisher(&a).publish(STATUS, Payload::new()).unwrap();
    assert!(!in_dispatch_context());
    r.dispatch_pending();
    assert!(flag.load(Ordering::Relaxed));
    assert!(!in_dispatch_context());
}
