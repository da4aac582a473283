use crate::error::{Error, Result};

/// Supervision for one example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    Tags(Vec<usize>),
}

/// Token indices with their supervision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: Label,
}

impl Example {
    /// Checks the example against a head and vocabulary size.
    pub fn validate(&self, head: &HeadKind, vocab_size: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptyInput("example"));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Structural(format!(
                "token index {t} outside a vocabulary of {vocab_size}"
            )));
        }
        match (&self.label, head) {
            (Label::Class(c), HeadKind::Classification { n_classes }) => {
                if c >= n_classes {
                    return Err(Error::InvalidLabel {
                        label: *c,
                        n_classes: *n_classes,
                    });
                }
            }
            (Label::Tags(tags), HeadKind::Tagging { tags: tagset }) => {
                if tags.len() != self.tokens.len() {
                    return Err(Error::shape(
                        "example",
                        format!("{} tags for {} tokens", tags.len(), self.tokens.len()),
                    ));
                }
                if let Some(&t) = tags.iter().find(|&&t| t >= tagset.len()) {
                    return Err(Error::InvalidTag {
                        index: t,
                        n_tags: tagset.len(),
                    });
                }
            }
            _ => {
                return Err(Error::Structural(
                    "label kind does not match the task head".into(),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Classification { n_classes: usize },
    /// Linear-chain CRF over the given tag names.
    Tagging { tags: Vec<String> },
}

impl HeadKind {
    pub fn is_tagging(&self) -> bool {
        matches!(self, HeadKind::Tagging { .. })
    }

    pub fn outputs(&self) -> usize {
        match self {
            HeadKind::Classification { n_classes } => *n_classes,
            HeadKind::Tagging { tags } => tags.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// One task: identity, output head, loss weight and data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub head: HeadKind,
    pub lambda: f64,
    pub corpus: Corpus,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, head: HeadKind, corpus: Corpus) -> Self {
        TaskSpec {
            id: id.into(),
            head,
            lambda: 1.0,
            corpus,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "task `{}` needs a positive loss weight",
                self.id
            )));
        }
        if self.head.outputs() == 0 {
            return Err(Error::Config(format!("task `{}` has no outputs", self.id)));
        }
        for ex in self
            .corpus
            .train
            .iter()
            .chain(&self.corpus.dev)
            .chain(&self.corpus.test)
        {
            ex.validate(&self.head, vocab_size)?;
        }
        Ok(())
    }
}
