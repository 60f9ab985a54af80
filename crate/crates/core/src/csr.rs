//! Critical-sample probing by single-place variable renaming.
//!
//! A test sample is critical when renaming every occurrence of one of its
//! variables to a fresh `varN` name changes the oracle's prediction. The
//! critical sample ratio is the critical fraction of the test set.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::refmodel::RefModel;
use crate::telemetry::Output;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("oracle failed on `{id}`: {message}")]
    Failure { id: String, message: String },
    #[error("oracle did not answer `{id}` within {seconds} s")]
    Timeout { id: String, seconds: u64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CsrError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// A model seen as a function from token sequences to predictions.
pub trait Oracle: Sync {
    fn predict(&self, id: &str, tokens: &[String]) -> Result<Output, OracleError>;
}

impl Oracle for RefModel {
    fn predict(&self, _id: &str, tokens: &[String]) -> Result<Output, OracleError> {
        Ok(Output::Label(RefModel::predict(self, tokens).label))
    }
}

/// Wraps a closure as an oracle.
pub struct FnOracle<F>(pub F);

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&[String]) -> Output + Sync,
{
    fn predict(&self, _id: &str, tokens: &[String]) -> Result<Output, OracleError> {
        Ok((self.0)(tokens))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformCandidate {
    pub origin: String,
    pub variable: String,
    pub fresh_name: String,
    pub tokens: Vec<String>,
}

impl TransformCandidate {
    /// Query id used on the oracle protocol.
    pub fn query_id(&self) -> String {
        format!("{}/{}", self.origin, self.variable)
    }
}

/// One candidate per variable, in first-occurrence order. Fresh names
/// come from a single `var1, var2, …` counter that skips any name already
/// present in the sample.
pub fn candidates(sample: &Sample) -> Vec<TransformCandidate> {
    let taken: BTreeSet<&str> = sample.tokens.iter().map(String::as_str).collect();
    let mut counter = 1usize;
    let mut out = Vec::new();
    for name in sample.variables_by_first_occurrence() {
        let fresh = loop {
            let candidate = format!("var{counter}");
            counter += 1;
            if !taken.contains(candidate.as_str()) {
                break candidate;
            }
        };
        let mut tokens = sample.tokens.clone();
        for &i in &sample.variables[name] {
            tokens[i] = fresh.clone();
        }
        out.push(TransformCandidate {
            origin: sample.id.clone(),
            variable: name.to_string(),
            fresh_name: fresh,
            tokens,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrOptions {
    /// Cap on candidates tried per sample, `None` for all of them.
    pub budget: Option<usize>,
    pub workers: usize,
}

impl Default for CsrOptions {
    fn default() -> Self {
        Self {
            budget: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub critical: bool,
    /// Oracle calls, including the one on the original sample.
    pub queries: usize,
}

/// Stops at the first candidate whose prediction differs.
pub fn is_critical(
    sample: &Sample,
    oracle: &dyn Oracle,
    budget: Option<usize>,
) -> Result<Probe, OracleError> {
    let cands = candidates(sample);
    if cands.is_empty() {
        return Ok(Probe {
            critical: false,
            queries: 0,
        });
    }
    let base = oracle.predict(&sample.id, &sample.tokens)?;
    let mut queries = 1;
    for c in cands.iter().take(budget.unwrap_or(usize::MAX)) {
        queries += 1;
        if oracle.predict(&c.query_id(), &c.tokens)? != base {
            return Ok(Probe {
                critical: true,
                queries,
            });
        }
    }
    Ok(Probe {
        critical: false,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrReport {
    pub test_size: usize,
    pub critical_ids: Vec<String>,
    pub ratio: f64,
    pub queries: usize,
}

pub fn csr(test_set: &Corpus, oracle: &dyn Oracle, options: &CsrOptions) -> Result<CsrReport, CsrError> {
    if test_set.is_empty() {
        return Err(CsrError::EmptyTestSet);
    }
    let probe_all = || -> Result<Vec<Probe>, OracleError> {
        test_set
            .samples()
            .par_iter()
            .map(|s| is_critical(s, oracle, options.budget))
            .collect()
    };
    let probes = if options.workers <= 1 {
        test_set
            .samples()
            .iter()
            .map(|s| is_critical(s, oracle, options.budget))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| CsrError::Pool(e.to_string()))?
            .install(probe_all)?
    };

    let critical_ids: Vec<String> = test_set
        .samples()
        .iter()
        .zip(&probes)
        .filter(|(_, p)| p.critical)
        .map(|(s, _)| s.id.clone())
        .collect();
    Ok(CsrReport {
        test_size: test_set.len(),
        ratio: critical_ids.len() as f64 / test_set.len() as f64,
        critical_ids,
        queries: probes.iter().map(|p| p.queries).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub id: String,
    pub prediction: Output,
}

/// Answers protocol requests from `input` until end of stream. Malformed
/// lines are answered with nothing; the client times out on them.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn Oracle, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(req) = serde_json::from_str::<OracleRequest>(&line) else {
            continue;
        };
        let Ok(prediction) = oracle.predict(&req.id, &req.tokens) else {
            continue;
        };
        let resp = OracleResponse {
            id: req.id,
            prediction,
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    responses: Receiver<String>,
    /// Answers that arrived for other ids.
    stash: HashMap<String, Output>,
}

impl Worker {
    fn spawn(program: &PathBuf, args: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            responses: rx,
            stash: HashMap::new(),
        })
    }

    fn query(&mut self, id: &str, tokens: &[String], timeout: Duration) -> Result<Output, OracleError> {
        let fail = |message: String| OracleError::Failure {
            id: id.to_string(),
            message,
        };
        let req = OracleRequest {
            id: id.to_string(),
            tokens: tokens.to_vec(),
        };
        let mut line = serde_json::to_string(&req).map_err(|e| fail(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| fail(format!("write: {e}")))?;

        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(p) = self.stash.remove(id) {
                return Ok(p);
            }
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.responses.recv_timeout(left) {
                Ok(text) => {
                    let resp: OracleResponse = serde_json::from_str(&text)
                        .map_err(|e| fail(format!("bad response line: {e}")))?;
                    self.stash.insert(resp.id, resp.prediction);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(OracleError::Timeout {
                        id: id.to_string(),
                        seconds: timeout.as_secs(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(fail("oracle process closed its output".into()))
                }
            }
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// External oracle speaking the line protocol, one process per worker.
/// Each process handles one query at a time.
pub struct SubprocessOracle {
    idle: Mutex<Vec<Worker>>,
    available: Condvar,
    timeout: Duration,
}

impl SubprocessOracle {
    pub fn spawn(program: impl Into<PathBuf>, args: &[String], workers: usize) -> std::io::Result<Self> {
        Self::with_timeout(program, args, workers, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        program: impl Into<PathBuf>,
        args: &[String],
        workers: usize,
        timeout: Duration,
    ) -> std::io::Result<Self> {
        let program = program.into();
        let idle = (0..workers.max(1))
            .map(|_| Worker::spawn(&program, args))
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self {
            idle: Mutex::new(idle),
            available: Condvar::new(),
            timeout,
        })
    }
}

impl Oracle for SubprocessOracle {
    fn predict(&self, id: &str, tokens: &[String]) -> Result<Output, OracleError> {
        let mut worker = {
            let mut idle = self.idle.lock().unwrap_or_else(|e| e.into_inner());
            loop {
                if let Some(w) = idle.pop() {
                    break w;
                }
                idle = self.available.wait(idle).unwrap_or_else(|e| e.into_inner());
            }
        };
        let result = worker.query(id, tokens, self.timeout);
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(worker);
        self.available.notify_one();
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{normalize_source, Task};

    fn sample(code: &str, id: &str) -> Sample {
        normalize_source(code, Task::MethodName, id).unwrap()
    }

    fn constant() -> FnOracle<impl Fn(&[String]) -> Output + Sync> {
        FnOracle(|_: &[String]| Output::from("same"))
    }

    fn keyed(name: &'static str) -> FnOracle<impl Fn(&[String]) -> Output + Sync> {
        FnOracle(move |t: &[String]| Output::from(if t.iter().any(|x| x == name) { "yes" } else { "no" }))
    }

    #[test]
    fn one_candidate_per_variable() {
        let s = sample("void f(int a, int b){a=b;}", "s");
        let c = candidates(&s);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].variable.as_str(), c[0].fresh_name.as_str()), ("a", "var1"));
        assert_eq!((c[1].variable.as_str(), c[1].fresh_name.as_str()), ("b", "var2"));
        for cand in &c {
            assert_eq!(cand.tokens.len(), s.tokens.len());
            let changed: Vec<usize> = (0..s.tokens.len()).filter(|&i| cand.tokens[i] != s.tokens[i]).collect();
            assert_eq!(changed, s.variables[&cand.variable]);
        }
        assert_eq!(c[0].query_id(), "s/a");
        assert!(candidates(&sample("f();", "n")).is_empty());
    }

    #[test]
    fn fresh_names_skip_collisions() {
        let s = sample("void f(int b){int var1 = b;}", "s");
        let c = candidates(&s);
        let fresh: Vec<&str> = c.iter().map(|c| c.fresh_name.as_str()).collect();
        assert_eq!(fresh, vec!["var2", "var3"]);
    }

    #[test]
    fn criticality() {
        let s = sample("void f(int a){a=1;}", "s");
        assert!(!is_critical(&s, &constant(), None).unwrap().critical);
        let p = is_critical(&s, &keyed("a"), None).unwrap();
        assert_eq!(p, Probe { critical: true, queries: 2 });
        let none = sample("void f(){g();}", "n");
        assert_eq!(is_critical(&none, &keyed("a"), None).unwrap().queries, 0);
    }

    #[test]
    fn budget_caps_queries() {
        let s = sample("void f(int a, int b, int c){x=1;}", "s");
        let p = is_critical(&s, &keyed("zz"), Some(2)).unwrap();
        assert_eq!(p, Probe { critical: false, queries: 3 });
        // key on the last variable: outside a budget of 1
        assert!(!is_critical(&s, &keyed("c"), Some(1)).unwrap().critical);
        assert!(is_critical(&s, &keyed("c"), None).unwrap().critical);
    }

    #[test]
    fn ratio_over_test_set() {
        let samples = vec![
            sample("void f(int a){a=1;}", "1"),
            sample("void f(int b){b=1;}", "2"),
            sample("void f(int c){c=1;}", "3"),
            sample("void f(){g();}", "4"),
        ];
        let corpus = Corpus::new(Task::MethodName, samples).unwrap();
        for workers in [1, 3] {
            let opts = CsrOptions { budget: None, workers };
            let r = csr(&corpus, &keyed("b"), &opts).unwrap();
            assert_eq!(r.ratio, 0.25);
            assert_eq!(r.critical_ids, vec!["2".to_string()]);
            assert_eq!(csr(&corpus, &constant(), &opts).unwrap().ratio, 0.0);
        }
        let empty = Corpus::new(Task::MethodName, vec![]).unwrap();
        assert_eq!(csr(&empty, &constant(), &CsrOptions::default()), Err(CsrError::EmptyTestSet));
    }

    #[test]
    fn failures_propagate() {
        struct Broken;
        impl Oracle for Broken {
            fn predict(&self, id: &str, _: &[String]) -> Result<Output, OracleError> {
                if id.contains('/') {
                    Err(OracleError::Failure { id: id.into(), message: "boom".into() })
                } else {
                    Ok(Output::from("x"))
                }
            }
        }
        let s = sample("void f(int a){a=1;}", "s");
        match is_critical(&s, &Broken, None) {
            Err(OracleError::Failure { id, .. }) => assert_eq!(id, "s/a"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serve_answers_each_request() {
        let input = "{\"id\":\"q1\",\"tokens\":[\"a\"]}\n\nnot json\n{\"id\":\"q2\",\"tokens\":[\"b\"]}\n";
        let mut out = Vec::new();
        serve(&keyed("a"), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<OracleResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], OracleResponse { id: "q1".into(), prediction: Output::from("yes") });
        assert_eq!(lines[1].prediction, Output::from("no"));
    }
}
