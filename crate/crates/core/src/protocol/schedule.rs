use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetPool;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionRole {
    Base,
    Incremental,
}

/// One entry of a schedule file.
///
/// `dataset` names a pool member (or several joined by `+`) and `class_ids`
/// are local to it; when `dataset` is absent the ids are global pool ids.
/// `shots` is `None` for the base session, which uses all training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub class_ids: Vec<usize>,
    pub ways: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    pub role: SessionRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub sessions: Vec<SessionSpec>,
}

/// How the incremental classes of a pool are grouped into sessions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementalLayout {
    /// One session per incremental domain holding all of its classes.
    SingleDomain,
    /// One class per session, in domain order.
    OneWay,
}

impl SessionSchedule {
    pub fn new(sessions: Vec<SessionSpec>) -> Result<Self> {
        let schedule = SessionSchedule { sessions };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schedule: SessionSchedule = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schedule serializes");
        fs::write(path, format!("{text}\n")).map_err(|e| Error::io(path, e))
    }

    /// Number of incremental sessions `B`.
    pub fn incremental_sessions(&self) -> usize {
        self.sessions.len().saturating_sub(1)
    }

    /// Structural checks that do not need the datasets.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Schedule(msg));
        let Some(first) = self.sessions.first() else {
            return err("schedule has no sessions".into());
        };
        if first.role != SessionRole::Base {
            return err(format!("session 0 '{}' must be the base session", first.name));
        }
        for (b, s) in self.sessions.iter().enumerate() {
            if b > 0 && s.role != SessionRole::Incremental {
                return err(format!("session {b} '{}' must be incremental", s.name));
            }
            if s.class_ids.is_empty() {
                return err(format!("session {b} '{}' has no classes", s.name));
            }
            if s.ways != s.class_ids.len() {
                return err(format!(
                    "session {b} '{}' declares {} ways but lists {} classes",
                    s.name,
                    s.ways,
                    s.class_ids.len()
                ));
            }
            let unique: BTreeSet<_> = s.class_ids.iter().collect();
            if unique.len() != s.class_ids.len() {
                return err(format!("session {b} '{}' repeats a class", s.name));
            }
            match (s.role, s.shots) {
                (SessionRole::Incremental, None | Some(0)) => {
                    return err(format!("incremental session {b} '{}' needs shots >= 1", s.name))
                }
                (SessionRole::Base, Some(_)) => {
                    return err("the base session uses all training data; omit shots".into())
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Global class ids per session; rejects a class assigned twice.
    pub fn resolve(&self, pool: &DatasetPool) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.sessions.len());
        for (b, s) in self.sessions.iter().enumerate() {
            let ids = pool.resolve_classes(s.dataset.as_deref(), &s.class_ids)?;
            for &c in &ids {
                if !seen.insert(c) {
                    return Err(Error::Schedule(format!(
                        "class {c} is assigned to more than one session (again in session {b})"
                    )));
                }
            }
            out.push(ids);
        }
        Ok(out)
    }

    /// Base session over the classes of `base_domains`, incremental sessions
    /// over `incremental_domains` of a pool, all ids global.
    pub fn from_domains(
        pool: &DatasetPool,
        base_domains: &[usize],
        incremental_domains: &[usize],
        layout: IncrementalLayout,
        shots: usize,
    ) -> Result<Self> {
        let train = pool.train();
        let check = |d: usize| {
            if d < train.num_domains() {
                Ok(())
            } else {
                Err(Error::Schedule(format!("domain {d} not in pool")))
            }
        };
        base_domains.iter().chain(incremental_domains).try_for_each(|&d| check(d))?;
        let base: Vec<usize> = base_domains.iter().flat_map(|&d| train.domain_classes(d)).collect();
        let mut sessions = vec![SessionSpec {
            name: "base".into(),
            dataset: None,
            ways: base.len(),
            class_ids: base,
            shots: None,
            role: SessionRole::Base,
        }];
        for &d in incremental_domains {
            let classes: Vec<usize> = train.domain_classes(d).collect();
            let domain = &train.domains()[d].name;
            match layout {
                IncrementalLayout::SingleDomain => sessions.push(SessionSpec {
                    name: domain.clone(),
                    dataset: None,
                    ways: classes.len(),
                    class_ids: classes,
                    shots: Some(shots),
                    role: SessionRole::Incremental,
                }),
                IncrementalLayout::OneWay => {
                    sessions.extend(classes.into_iter().map(|c| SessionSpec {
                        name: format!("{domain}/{c}"),
                        dataset: None,
                        ways: 1,
                        class_ids: vec![c],
                        shots: Some(shots),
                        role: SessionRole::Incremental,
                    }))
                }
            }
        }
        Self::new(sessions)
    }
}
