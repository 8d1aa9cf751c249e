use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    State,
    Language,
    Scene,
    Object,
}

impl TokenRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenRole::State => "state",
            TokenRole::Language => "language",
            TokenRole::Scene => "scene",
            TokenRole::Object => "object",
        }
    }
}

/// Where language tokens come from at each navigation step, and whether they
/// are re-encoded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LangAttnPolicy {
    /// Re-encode the raw word embeddings at every step.
    EmbAttn,
    /// Re-encode the language features produced at initialisation, every step.
    InitAttn,
    /// Re-encode the previous step's language output.
    ReAttn,
    /// Encode language once at initialisation; afterwards it is keys/values only.
    #[default]
    InitOnly,
}

impl LangAttnPolicy {
    pub const ALL: [LangAttnPolicy; 4] = [
        LangAttnPolicy::EmbAttn,
        LangAttnPolicy::InitAttn,
        LangAttnPolicy::ReAttn,
        LangAttnPolicy::InitOnly,
    ];

    /// Whether language tokens are query rows during navigation.
    pub fn reencodes_language(self) -> bool {
        !matches!(self, LangAttnPolicy::InitOnly)
    }
}

/// Boolean `[n_queries x n_keys]` attention mask over a role-labelled token
/// sequence. Query rows are a subset of the key sequence, given by
/// `query_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    key_roles: Vec<TokenRole>,
    query_index: Vec<usize>,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(
        key_roles: Vec<TokenRole>,
        query_index: Vec<usize>,
        allowed: Vec<bool>,
    ) -> Result<Self> {
        let (nq, nk) = (query_index.len(), key_roles.len());
        if nk == 0 || nq == 0 {
            return Err(Error::Contract(format!(
                "attention mask needs at least one query and key, got {nq}x{nk}"
            )));
        }
        if allowed.len() != nq * nk {
            return Err(Error::Shape {
                op: "attention_mask",
                lhs: vec![nq, nk],
                rhs: vec![allowed.len()],
            });
        }
        if let Some(&bad) = query_index.iter().find(|&&q| q >= nk) {
            return Err(Error::Index {
                what: "query token",
                index: bad,
                len: nk,
            });
        }
        for r in 0..nq {
            if !allowed[r * nk..(r + 1) * nk].iter().any(|&a| a) {
                return Err(Error::InvalidMask { row: r });
            }
        }
        Ok(Self {
            key_roles,
            query_index,
            allowed,
        })
    }

    /// Every token queries every token.
    pub fn full(roles: Vec<TokenRole>) -> Result<Self> {
        let n = roles.len();
        Self::new(roles, (0..n).collect(), vec![true; n * n])
    }

    pub fn n_queries(&self) -> usize {
        self.query_index.len()
    }

    pub fn n_keys(&self) -> usize {
        self.key_roles.len()
    }

    pub fn key_roles(&self) -> &[TokenRole] {
        &self.key_roles
    }

    pub fn query_roles(&self) -> Vec<TokenRole> {
        self.query_index
            .iter()
            .map(|&i| self.key_roles[i])
            .collect()
    }

    pub fn query_index(&self) -> &[usize] {
        &self.query_index
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n_keys() + k]
    }

    /// Key positions holding the given role, in sequence order.
    pub fn keys_with_role(&self, role: TokenRole) -> Vec<usize> {
        self.key_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Position of a key token among the query rows, if it is one.
    pub fn query_row_of(&self, key: usize) -> Option<usize> {
        self.query_index.iter().position(|&q| q == key)
    }

    /// Reorder key columns (and key roles); query rows follow their tokens.
    pub fn permute_keys(&self, perm: &[usize]) -> Result<Self> {
        let nk = self.n_keys();
        if perm.len() != nk {
            return Err(Error::Shape {
                op: "permute_keys",
                lhs: vec![nk],
                rhs: vec![perm.len()],
            });
        }
        let mut inverse = vec![0; nk];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let key_roles = perm.iter().map(|&old| self.key_roles[old]).collect();
        let query_index = self.query_index.iter().map(|&q| inverse[q]).collect();
        let mut allowed = Vec::with_capacity(self.allowed.len());
        for r in 0..self.n_queries() {
            allowed.extend(perm.iter().map(|&old| self.allows(r, old)));
        }
        Self::new(key_roles, query_index, allowed)
    }
}

/// Token layout `[state; language; scene; object]` for one navigation step.
pub fn nav_roles(n_lang: usize, n_scene: usize, n_obj: usize) -> Vec<TokenRole> {
    let mut roles = vec![TokenRole::State];
    roles.extend(std::iter::repeat_n(TokenRole::Language, n_lang));
    roles.extend(std::iter::repeat_n(TokenRole::Scene, n_scene));
    roles.extend(std::iter::repeat_n(TokenRole::Object, n_obj));
    roles
}

/// Mask for one navigation step. Under [`LangAttnPolicy::InitOnly`] the
/// language tokens are keys and values only; the other policies also make
/// them queries so they are re-encoded.
pub fn build_nav_mask(
    n_lang: usize,
    n_scene: usize,
    n_obj: usize,
    policy: LangAttnPolicy,
) -> Result<AttentionMask> {
    if n_scene == 0 {
        return Err(Error::Contract(
            "navigation step needs at least one scene token (the stop token)".into(),
        ));
    }
    let roles = nav_roles(n_lang, n_scene, n_obj);
    let query_index: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| policy.reencodes_language() || **r != TokenRole::Language)
        .map(|(i, _)| i)
        .collect();
    let allowed = vec![true; query_index.len() * roles.len()];
    AttentionMask::new(roles, query_index, allowed)
}
