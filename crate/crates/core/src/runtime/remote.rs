//! Remote pricing over TCP.
//!
//! The coordinator ships each worker the subproblems of its partition block
//! once. Every pricing round then sends only the duals of rows touching that
//! block and receives one column summary per edge. A worker that fails is
//! dropped and its edges are re-shipped to a live worker.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::decomposition::{Candidate, DecompositionError, Duals, EdgeSubproblem, Pricer, PricingRound, TieRule};

use super::protocol::{read_message, write_message, Message, PriceReply, PriceRequest, DEFAULT_MAX_FRAME};
use super::{RuntimeError, WorkPartition};

struct Link {
    id: usize,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    edges: Vec<usize>,
    alive: bool,
}

impl Link {
    fn send(&mut self, msg: &Message) -> Result<u64, RuntimeError> {
        Ok(write_message(&mut self.writer, msg)?)
    }

    fn recv(&mut self, max_frame: usize) -> Result<(Message, u64), RuntimeError> {
        Ok(read_message(&mut self.reader, max_frame)?)
    }
}

/// A listening socket waiting for workers.
pub struct Coordinator {
    listener: TcpListener,
    max_frame: usize,
}

impl Coordinator {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, RuntimeError> {
        Ok(Self { listener: TcpListener::bind(addr)?, max_frame: DEFAULT_MAX_FRAME })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, RuntimeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Wait for `workers` connections, then ship each its block of edges.
    pub fn accept_workers(
        self,
        workers: usize,
        subs: Arc<[EdgeSubproblem]>,
        timeout: Option<Duration>,
    ) -> Result<RemotePricer, RuntimeError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        self.listener.set_nonblocking(deadline.is_some())?;
        let partition = WorkPartition::balanced(&subs, workers);
        let mut links = Vec::with_capacity(workers);
        let mut setup_bytes = 0;
        while links.len() < workers {
            let stream = match self.listener.accept() {
                Ok((s, peer)) => {
                    log::info!("worker {} connected from {peer}", links.len());
                    s
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if deadline.is_some_and(|d| Instant::now() > d) {
                        return Err(RuntimeError::Worker {
                            worker: links.len(),
                            message: format!("only {} of {workers} workers connected before the timeout", links.len()),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            let id = links.len();
            let mut link = Link {
                id,
                reader: BufReader::new(stream.try_clone()?),
                writer: BufWriter::new(stream),
                edges: partition.blocks()[id].clone().collect(),
                alive: true,
            };
            match link.recv(self.max_frame)? {
                (Message::Hello { .. }, n) => setup_bytes += n,
                (other, _) => {
                    return Err(RuntimeError::Worker { worker: id, message: format!("expected HELLO, got {:?}", other.kind()) })
                }
            }
            setup_bytes += link.send(&Message::Hello { peer: id as u32 })?;
            let data: Vec<EdgeSubproblem> = link.edges.iter().map(|&e| subs[e].clone()).collect();
            setup_bytes += link.send(&Message::EdgeData(data))?;
            links.push(link);
        }
        let touching = subs.iter().map(EdgeSubproblem::rows_touching).collect();
        Ok(RemotePricer { subs, touching, links, max_frame: self.max_frame, setup_bytes })
    }
}

/// Prices edges on connected remote workers.
pub struct RemotePricer {
    subs: Arc<[EdgeSubproblem]>,
    touching: Vec<Vec<usize>>,
    links: Vec<Link>,
    max_frame: usize,
    setup_bytes: u64,
}

impl RemotePricer {
    pub fn num_live_workers(&self) -> usize {
        self.links.iter().filter(|l| l.alive).count()
    }

    /// Bytes spent on handshakes and shipping edge data, including re-shipping
    /// after failures. Not counted in per-round traffic.
    pub fn setup_bytes(&self) -> u64 {
        self.setup_bytes
    }

    pub fn edges_of(&self, worker: usize) -> &[usize] {
        &self.links[worker].edges
    }

    fn request_for(&self, edges: &[usize], iteration: usize, duals: &Duals, tie: TieRule) -> Message {
        let mut rows: Vec<usize> = edges.iter().flat_map(|&e| self.touching[e].iter().copied()).collect();
        rows.sort_unstable();
        rows.dedup();
        Message::PriceRequest(PriceRequest {
            iteration: iteration as u64,
            tie,
            pi: rows.iter().map(|&r| (r as u64, duals.pi[r])).collect(),
            gamma: edges.iter().map(|&e| (e as u64, duals.gamma[e])).collect(),
        })
    }

    fn round(&mut self, iteration: usize, duals: &Duals, tie: TieRule) -> Result<PricingRound, RuntimeError> {
        let n_edges = self.subs.len();
        if duals.gamma.len() != n_edges {
            return Err(DecompositionError::DualDimension { row: n_edges, rows: duals.gamma.len() }.into());
        }
        if let Some(&row) = self.touching.iter().flatten().find(|&&r| r >= duals.pi.len()) {
            return Err(DecompositionError::DualDimension { row, rows: duals.pi.len() }.into());
        }
        let mut slots: Vec<Option<Candidate>> = vec![None; n_edges];
        let (mut bytes_tx, mut bytes_rx) = (0u64, 0u64);
        let mut pending: Vec<(usize, Vec<usize>)> = self
            .links
            .iter()
            .filter(|l| l.alive && !l.edges.is_empty())
            .map(|l| (l.id, l.edges.clone()))
            .collect();

        while !pending.is_empty() {
            // send every request before reading any reply so workers price concurrently
            let mut sent = Vec::with_capacity(pending.len());
            let mut orphaned = Vec::new();
            for (link, edges) in pending.drain(..) {
                let req = self.request_for(&edges, iteration, duals, tie);
                match self.links[link].send(&req) {
                    Ok(n) => {
                        bytes_tx += n;
                        sent.push((link, edges));
                    }
                    Err(e) => {
                        log::warn!("worker {link} failed on send: {e}");
                        self.links[link].alive = false;
                        orphaned.extend(edges);
                    }
                }
            }
            for (link, edges) in sent {
                let received = self.links[link].recv(self.max_frame);
                let result = received.and_then(|(reply, n)| {
                    bytes_rx += n;
                    Self::check_reply(link, reply, iteration, &edges)
                });
                match result {
                    Ok(candidates) => {
                        for c in candidates {
                            let e = c.column.edge;
                            slots[e] = Some(c);
                        }
                    }
                    Err(e) => {
                        log::warn!("worker {link} failed: {e}");
                        self.links[link].alive = false;
                        orphaned.extend(edges);
                    }
                }
            }
            if orphaned.is_empty() {
                break;
            }
            pending = self.reassign(orphaned)?;
        }

        let candidates = slots
            .into_iter()
            .enumerate()
            .map(|(e, c)| c.ok_or(RuntimeError::Unpriceable { edges: vec![e] }))
            .collect::<Result<_, _>>()?;
        Ok(PricingRound { candidates, bytes_tx, bytes_rx })
    }

    fn check_reply(link: usize, reply: Message, iteration: usize, edges: &[usize]) -> Result<Vec<Candidate>, RuntimeError> {
        match reply {
            Message::PriceReply(PriceReply { iteration: it, candidates }) => {
                if it != iteration as u64 {
                    return Err(RuntimeError::Worker { worker: link, message: format!("reply for iteration {it}, expected {iteration}") });
                }
                if candidates.len() != edges.len() || candidates.iter().zip(edges).any(|(c, &e)| c.column.edge != e) {
                    return Err(RuntimeError::Worker { worker: link, message: "reply does not match the requested edges".into() });
                }
                Ok(candidates)
            }
            Message::Error(text) => Err(RuntimeError::Worker { worker: link, message: text }),
            other => Err(RuntimeError::Worker { worker: link, message: format!("unexpected {:?}", other.kind()) }),
        }
    }

    /// Hand orphaned edges to the live worker with the least table volume,
    /// shipping their data first.
    fn reassign(&mut self, mut orphaned: Vec<usize>) -> Result<Vec<(usize, Vec<usize>)>, RuntimeError> {
        orphaned.sort_unstable();
        loop {
            let volume = |l: &Link| -> usize { l.edges.iter().map(|&e| self.subs[e].size()).sum() };
            let Some(target) = self.links.iter().filter(|l| l.alive).min_by_key(|l| (volume(l), l.id)).map(|l| l.id) else {
                return Err(RuntimeError::Unpriceable { edges: orphaned });
            };
            let data: Vec<EdgeSubproblem> = orphaned.iter().map(|&e| self.subs[e].clone()).collect();
            match self.links[target].send(&Message::EdgeData(data)) {
                Ok(n) => {
                    self.setup_bytes += n;
                    log::info!("re-shipped {} edges to worker {target}", orphaned.len());
                    self.links[target].edges.extend(&orphaned);
                    return Ok(vec![(target, orphaned)]);
                }
                Err(e) => {
                    log::warn!("worker {target} failed while receiving edge data: {e}");
                    self.links[target].alive = false;
                    orphaned.extend(std::mem::take(&mut self.links[target].edges));
                    orphaned.sort_unstable();
                    orphaned.dedup();
                }
            }
        }
    }

    /// Ask every live worker to exit.
    pub fn shutdown(&mut self) {
        for l in self.links.iter_mut().filter(|l| l.alive) {
            if l.send(&Message::Shutdown).is_err() {
                log::debug!("worker {} already gone at shutdown", l.id);
            }
            l.alive = false;
        }
    }
}

impl Drop for RemotePricer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Pricer for RemotePricer {
    fn name(&self) -> &str {
        "remote"
    }

    fn price_all(&mut self, iteration: usize, duals: &Duals, tie: TieRule) -> Result<PricingRound, DecompositionError> {
        Ok(self.round(iteration, duals, tie)?)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub max_frame: usize,
    /// Keep retrying the initial connection this long.
    pub connect_timeout: Duration,
    /// Drop the connection instead of answering request number `n + 1`.
    /// For exercising coordinator failover.
    pub fail_after_requests: Option<usize>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self { max_frame: DEFAULT_MAX_FRAME, connect_timeout: Duration::from_secs(10), fail_after_requests: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub requests: usize,
    pub edges: usize,
    /// Ended by dropping the connection per [`WorkerOptions::fail_after_requests`].
    pub simulated_failure: bool,
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, RuntimeError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::debug!("connect to {addr} failed ({e}), retrying");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn price_request(edges: &HashMap<usize, EdgeSubproblem>, req: &PriceRequest) -> Result<Vec<Candidate>, String> {
    let pi: HashMap<usize, f64> = req.pi.iter().map(|&(r, v)| (r as usize, v)).collect();
    let iteration = req.iteration as usize;
    req.gamma
        .iter()
        .map(|&(edge, gamma)| {
            let sub = edges.get(&(edge as usize)).ok_or_else(|| format!("no data for edge {edge}"))?;
            if let Some(t) = sub.terms.iter().find(|t| !pi.contains_key(&t.row)) {
                return Err(format!("request lacks the dual of row {} for edge {edge}", t.row));
            }
            Ok(sub.price(|r| pi[&r], gamma, req.tie, iteration))
        })
        .collect()
}

/// Connect to a coordinator and serve pricing requests until SHUTDOWN or
/// the connection closes.
pub fn run_worker(addr: &str, opts: &WorkerOptions) -> Result<WorkerStats, RuntimeError> {
    let stream = connect(addr, opts.connect_timeout)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_message(&mut writer, &Message::Hello { peer: 0 })?;
    let id = match read_message(&mut reader, opts.max_frame)?.0 {
        Message::Hello { peer } => peer,
        other => return Err(RuntimeError::Worker { worker: 0, message: format!("expected HELLO, got {:?}", other.kind()) }),
    };
    log::info!("registered as worker {id}");

    let mut edges: HashMap<usize, EdgeSubproblem> = HashMap::new();
    let mut stats = WorkerStats::default();
    loop {
        let msg = match read_message(&mut reader, opts.max_frame) {
            Ok((m, _)) => m,
            Err(super::ProtocolError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => {
                // unknown or corrupt frame: report and close
                let _ = write_message(&mut writer, &Message::Error(e.to_string()));
                return Err(e.into());
            }
        };
        match msg {
            Message::EdgeData(subs) => {
                for s in subs {
                    edges.insert(s.edge, s);
                }
                stats.edges = edges.len();
            }
            Message::PriceRequest(req) => {
                if opts.fail_after_requests.is_some_and(|n| stats.requests >= n) {
                    stats.simulated_failure = true;
                    break;
                }
                stats.requests += 1;
                let reply = match price_request(&edges, &req) {
                    Ok(candidates) => Message::PriceReply(PriceReply { iteration: req.iteration, candidates }),
                    Err(text) => Message::Error(text),
                };
                write_message(&mut writer, &reply)?;
            }
            Message::Shutdown => break,
            other => {
                let text = format!("unexpected {:?}", other.kind());
                write_message(&mut writer, &Message::Error(text.clone()))?;
                return Err(RuntimeError::Worker { worker: id as usize, message: text });
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{all_edge_costs, Graph};
    use crate::relaxation::build_consistency_rows;
    use crate::runtime::SerialPricer;
    use std::thread;

    fn setup() -> (Arc<[EdgeSubproblem]>, Duals) {
        let g = Graph::zeros(vec![2, 3, 2, 3], &[(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]).unwrap();
        let cs = build_consistency_rows(&g).unwrap();
        let subs: Arc<[EdgeSubproblem]> = all_edge_costs(&g).iter().map(|c| EdgeSubproblem::new(c, &cs)).collect();
        let duals = Duals {
            pi: (0..cs.num_rows()).map(|r| ((r * 7 % 5) as f64 - 2.0) * 0.3).collect(),
            gamma: (0..5).map(|e| e as f64 * 0.01).collect(),
        };
        (subs, duals)
    }

    fn spawn_workers(addr: String, opts: Vec<WorkerOptions>) -> Vec<thread::JoinHandle<Result<WorkerStats, RuntimeError>>> {
        opts.into_iter()
            .map(|o| {
                let a = addr.clone();
                thread::spawn(move || run_worker(&a, &o))
            })
            .collect()
    }

    #[test]
    fn remote_matches_serial() {
        let (subs, duals) = setup();
        let coord = Coordinator::bind("127.0.0.1:0").unwrap();
        let addr = coord.local_addr().unwrap().to_string();
        let handles = spawn_workers(addr, vec![WorkerOptions::default(); 2]);
        let mut remote = coord.accept_workers(2, subs.clone(), Some(Duration::from_secs(10))).unwrap();
        let mut serial = SerialPricer::new(subs);
        for it in 1..4 {
            let r = remote.price_all(it, &duals, TieRule::LowestIndex).unwrap();
            let s = serial.price_all(it, &duals, TieRule::LowestIndex).unwrap();
            assert_eq!(r.candidates, s.candidates);
            assert!(r.bytes_tx > 0 && r.bytes_rx > 0);
        }
        drop(remote);
        for h in handles {
            let stats = h.join().unwrap().unwrap();
            assert_eq!(stats.requests, 3);
        }
    }

    #[test]
    fn failed_worker_edges_move_to_a_live_one() {
        let (subs, duals) = setup();
        let coord = Coordinator::bind("127.0.0.1:0").unwrap();
        let addr = coord.local_addr().unwrap().to_string();
        // whichever worker connects first gets the first block; both variants
        // must end with every edge priced
        let flaky = WorkerOptions { fail_after_requests: Some(1), ..Default::default() };
        let handles = spawn_workers(addr, vec![flaky, WorkerOptions::default()]);
        let mut remote = coord.accept_workers(2, subs.clone(), Some(Duration::from_secs(10))).unwrap();
        let mut serial = SerialPricer::new(subs.clone());
        for it in 1..4 {
            let r = remote.price_all(it, &duals, TieRule::MaxCost).unwrap();
            assert_eq!(r.candidates, serial.price_all(it, &duals, TieRule::MaxCost).unwrap().candidates);
        }
        assert_eq!(remote.num_live_workers(), 1);
        let live = (0..2).find(|&w| remote.links[w].alive).unwrap();
        assert_eq!(remote.edges_of(live).len(), subs.len());
        drop(remote);
        let stats: Vec<_> = handles.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
        assert_eq!(stats.iter().filter(|s| s.simulated_failure).count(), 1);
    }

    #[test]
    fn all_workers_lost_is_an_error() {
        let (subs, duals) = setup();
        let coord = Coordinator::bind("127.0.0.1:0").unwrap();
        let addr = coord.local_addr().unwrap().to_string();
        let flaky = WorkerOptions { fail_after_requests: Some(0), ..Default::default() };
        let handles = spawn_workers(addr, vec![flaky]);
        let mut remote = coord.accept_workers(1, subs, Some(Duration::from_secs(10))).unwrap();
        let err = remote.round(1, &duals, TieRule::LowestIndex).unwrap_err();
        assert!(matches!(err, RuntimeError::Unpriceable { .. }));
        drop(remote);
        for h in handles {
            h.join().unwrap().unwrap();
        }
    }

    #[test]
    fn accept_times_out_without_workers() {
        let (subs, _) = setup();
        let coord = Coordinator::bind("127.0.0.1:0").unwrap();
        let err = coord.accept_workers(1, subs, Some(Duration::from_millis(50))).err().unwrap();
        assert!(matches!(err, RuntimeError::Worker { .. }));
    }
}
