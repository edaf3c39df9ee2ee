//! Multi-user front door: owns the backends, one tree per user, and the
//! optional on-disk logs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, Embedder, HttpBackend, MockChat, MockEmbedder};
use crate::config::{BackendKind, Config, ConfigError};
use crate::consolidation::{ConsolidationError, Consolidator, DialogTurn, Schedule};
use crate::prompts::{PromptError, PromptSet};
use crate::recall::{RecallError, RecallOptions, RecallResult, Recaller};
use crate::store::{self, OpenMode, Record, StoreError, TranscriptFile, UserLog};
use crate::tmt::{MemoryNode, MemoryTree, Timestamp, TreeReport};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error(transparent)]
    Consolidation(#[from] ConsolidationError),
    #[error(transparent)]
    Recall(#[from] RecallError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend setup: {0}")]
    Backend(#[from] BackendError),
    #[error("embedder dimension {embedder} differs from configured {configured}")]
    DimensionMismatch { embedder: usize, configured: usize },
}

impl EngineError {
    /// Process exit code: 2 for bad data, 3 for backend trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Consolidation(ConsolidationError::BackendFailure { .. })
            | EngineError::Recall(RecallError::Backend(_))
            | EngineError::Backend(_) => 3,
            _ => 2,
        }
    }
}

struct UserState {
    tree: MemoryTree,
    schedule: Schedule,
    log: Option<UserLog>,
}

impl UserState {
    fn append(&mut self, records: Vec<Record>) -> Result<(), StoreError> {
        match &mut self.log {
            Some(log) if !records.is_empty() => log.append_all(&records).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct Storage {
    root: PathBuf,
    mode: OpenMode,
}

pub struct Engine {
    config: Config,
    prompts: PromptSet,
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    storage: Option<Storage>,
    users: RwLock<HashMap<String, Arc<RwLock<UserState>>>>,
}

impl Engine {
    pub fn new(
        config: Config,
        prompts: PromptSet,
        chat: Arc<dyn ChatBackend>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if embedder.dimension() != config.embedding_dim {
            return Err(EngineError::DimensionMismatch {
                embedder: embedder.dimension(),
                configured: config.embedding_dim,
            });
        }
        Ok(Self {
            config,
            prompts,
            chat,
            embedder,
            storage: None,
            users: RwLock::new(HashMap::new()),
        })
    }

    /// Backends chosen by `config.backend`; prompts from `config.prompt_dir`
    /// when set.
    pub fn from_config(config: Config) -> Result<Self, EngineError> {
        let prompts = match config.prompt_dir() {
            Some(dir) => PromptSet::load_dir(&dir)?,
            None => PromptSet::default(),
        };
        let (chat, embedder): (Arc<dyn ChatBackend>, Arc<dyn Embedder>) = match config.backend {
            BackendKind::Mock => (
                Arc::new(MockChat::new(prompts.clone())),
                Arc::new(MockEmbedder::new(config.embedding_dim)),
            ),
            BackendKind::Http => {
                let http = Arc::new(HttpBackend::new(config.http_settings())?);
                (http.clone(), http)
            }
        };
        Self::new(config, prompts, chat, embedder)
    }

    pub fn mock(config: Config) -> Result<Self, EngineError> {
        Self::from_config(Config {
            backend: BackendKind::Mock,
            ..config
        })
    }

    /// Persists every user under `root`. Users are loaded from their logs on
    /// first use.
    pub fn with_store(mut self, root: impl Into<PathBuf>, mode: OpenMode) -> Self {
        self.storage = Some(Storage {
            root: root.into(),
            mode,
        });
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.storage.as_ref().map(|s| s.root.as_path())
    }

    /// Known users: loaded ones plus any with a log on disk.
    pub fn users(&self) -> Result<Vec<String>, EngineError> {
        let mut users: Vec<String> = self.users.read().keys().cloned().collect();
        if let Some(storage) = &self.storage {
            users.extend(store::list_users(&storage.root)?);
        }
        users.sort();
        users.dedup();
        Ok(users)
    }

    fn user(&self, user_id: &str, create: bool) -> Result<Arc<RwLock<UserState>>, EngineError> {
        if let Some(state) = self.users.read().get(user_id) {
            return Ok(state.clone());
        }
        let mut users = self.users.write();
        if let Some(state) = users.get(user_id) {
            return Ok(state.clone());
        }
        let state = match &self.storage {
            Some(storage) => {
                let exists = storage.root.join(user_id).join(store::LOG_FILE).is_file();
                if !exists && !(create && storage.mode == OpenMode::Writable) {
                    store::validate_user_id(user_id)?;
                    return Err(EngineError::UnknownUser(user_id.to_string()));
                }
                let (log, replay) = UserLog::open(&storage.root, user_id, self.config.embedding_dim, storage.mode)?;
                UserState {
                    tree: replay.tree,
                    schedule: replay.schedule,
                    log: Some(log),
                }
            }
            None if create => UserState {
                tree: MemoryTree::new(user_id, self.config.embedding_dim),
                schedule: Schedule::default(),
                log: None,
            },
            None => return Err(EngineError::UnknownUser(user_id.to_string())),
        };
        let state = Arc::new(RwLock::new(state));
        users.insert(user_id.to_string(), state.clone());
        Ok(state)
    }

    fn consolidator(&self) -> Consolidator<'_> {
        Consolidator {
            chat: self.chat.as_ref(),
            embedder: self.embedder.as_ref(),
            prompts: &self.prompts,
            config: &self.config,
        }
    }

    fn recaller(&self) -> Recaller<'_> {
        Recaller {
            chat: self.chat.as_ref(),
            embedder: self.embedder.as_ref(),
            prompts: &self.prompts,
            config: &self.config,
        }
    }

    /// Runs one scheduling step under the user's write lock and logs what it
    /// produced, including nodes created before a failure.
    fn step(
        &self,
        user_id: &str,
        lead: Option<Record>,
        run: impl FnOnce(
            &Consolidator<'_>,
            &mut MemoryTree,
            &mut Schedule,
            &mut Vec<MemoryNode>,
        ) -> Result<(), ConsolidationError>,
    ) -> Result<Vec<MemoryNode>, EngineError> {
        let state = self.user(user_id, true)?;
        let mut state = state.write();
        let UserState { tree, schedule, .. } = &mut *state;
        let mut created = Vec::new();
        let outcome = run(&self.consolidator(), tree, schedule, &mut created);
        let mut records: Vec<Record> = lead.into_iter().collect();
        records.extend(created.iter().cloned().map(Record::Node));
        records.push(Record::State(state.schedule.clone()));
        state.append(records)?;
        outcome?;
        Ok(created)
    }

    fn check_writable(&self, user_id: &str) -> Result<(), EngineError> {
        store::validate_user_id(user_id)?;
        if let Some(storage) = &self.storage {
            if storage.mode == OpenMode::ReadOnly {
                return Err(StoreError::Io {
                    path: storage.root.join(user_id).display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::PermissionDenied, "store opened read-only"),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Ingests one turn. Returns the nodes it created, closures first.
    pub fn ingest_turn(&self, user_id: &str, turn: &DialogTurn) -> Result<Vec<MemoryNode>, EngineError> {
        self.check_writable(user_id)?;
        {
            let state = self.user(user_id, true)?;
            let state = state.read();
            if let Some(last) = state.schedule.last_timestamp {
                if turn.timestamp < last {
                    return Err(ConsolidationError::NonMonotonicTimestamp {
                        turn_id: turn.turn_id.clone(),
                        last,
                        got: turn.timestamp,
                    }
                    .into());
                }
            }
        }
        self.step(
            user_id,
            Some(Record::Turn(turn.clone())),
            |c, tree, schedule, created| c.ingest_turn(tree, schedule, turn, created),
        )
    }

    pub fn ingest_turns(&self, user_id: &str, turns: &[DialogTurn]) -> Result<Vec<MemoryNode>, EngineError> {
        let mut created = Vec::new();
        for turn in turns {
            created.extend(self.ingest_turn(user_id, turn)?);
        }
        Ok(created)
    }

    /// Ingests every turn of a transcript, then flushes at its last timestamp.
    pub fn ingest_transcript(&self, transcript: &TranscriptFile) -> Result<Vec<MemoryNode>, EngineError> {
        let turns = transcript.to_turns()?;
        let mut created = self.ingest_turns(&transcript.user_id, &turns)?;
        created.extend(self.flush(&transcript.user_id, None)?);
        Ok(created)
    }

    /// Closes every open group. `now` defaults to the last ingested time.
    pub fn flush(&self, user_id: &str, now: Option<Timestamp>) -> Result<Vec<MemoryNode>, EngineError> {
        self.check_writable(user_id)?;
        let now = match now {
            Some(now) => now,
            None => {
                let state = self.user(user_id, false)?;
                let last = state.read().schedule.last_timestamp;
                match last {
                    Some(last) => last,
                    None => return Ok(Vec::new()),
                }
            }
        };
        {
            let state = self.user(user_id, false)?;
            let state = state.read();
            if state.schedule.last_timestamp.is_none_or(|last| now >= last)
                && state.schedule.open_groups().is_empty()
                && state.schedule.pending.is_empty()
            {
                return Ok(Vec::new());
            }
        }
        self.step(user_id, Some(Record::Flush { now }), |c, tree, schedule, created| {
            c.flush(tree, schedule, now, created)
        })
    }

    pub fn flush_all(&self) -> Result<Vec<MemoryNode>, EngineError> {
        let mut created = Vec::new();
        for user in self.users()? {
            created.extend(self.flush(&user, None)?);
        }
        Ok(created)
    }

    /// Re-runs consolidation work left queued by a backend failure.
    pub fn retry_pending(&self, user_id: &str) -> Result<Vec<MemoryNode>, EngineError> {
        self.check_writable(user_id)?;
        self.step(user_id, None, |c, tree, schedule, created| {
            c.retry_pending(tree, schedule, created)
        })
    }

    pub fn pending_work(&self, user_id: &str) -> Result<usize, EngineError> {
        Ok(self.user(user_id, false)?.read().schedule.pending.len())
    }

    pub fn recall(
        &self,
        user_id: &str,
        question: &str,
        t_q: Option<Timestamp>,
        options: RecallOptions,
    ) -> Result<RecallResult, EngineError> {
        let state = self.user(user_id, false)?;
        let state = state.read();
        let result = self
            .recaller()
            .recall(&state.tree, question, t_q, state.schedule.last_timestamp, options)?;
        Ok(result)
    }

    pub fn validate(&self, user_id: &str) -> Result<TreeReport, EngineError> {
        Ok(self.user(user_id, false)?.read().tree.validate())
    }

    /// Runs `f` against the user's tree under a read lock.
    pub fn with_tree<R>(&self, user_id: &str, f: impl FnOnce(&MemoryTree) -> R) -> Result<R, EngineError> {
        Ok(f(&self.user(user_id, false)?.read().tree))
    }
}
