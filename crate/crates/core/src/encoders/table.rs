use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// A trainable `L_max × d` table of position vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedTable {
    pub table: ParamId,
    pub max_len: usize,
    pub dim: usize,
}

impl LearnedTable {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        max_len: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let table = store.add(
            name,
            Tensor::randn(&[max_len, dim], std, rng),
            ParamGroup::Encoder,
        );
        LearnedTable {
            table,
            max_len,
            dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.max_len * self.dim
    }

    fn check(&self, len: usize) -> Result<()> {
        if len > self.max_len {
            return Err(Error::Capacity {
                requested: len,
                max: self.max_len,
            });
        }
        Ok(())
    }

    pub fn lookup_on_tape(&self, tape: &mut Tape, bound: &Bound, len: usize) -> Result<Var> {
        self.check(len)?;
        let rows: Vec<usize> = (0..len).collect();
        tape.gather_rows(bound[self.table], &rows)
    }
}

/// First `len` rows of the table; fails past `L_max`.
pub fn table_lookup(tbl: &LearnedTable, store: &ParamStore, len: usize) -> Result<Tensor> {
    tbl.check(len)?;
    store.get(tbl.table).take_rows(len)
}
