//! Trainable arrays, their initialization, gradients and the model file.
//!
//! Every array is a flat row-major `Vec`. Matrix conventions:
//!
//! * `conv_p[k]` is `d × d` and `conv_w[k]` is `d × 2d`; both act on column
//!   vectors (`P · u`).
//! * `att_wq[k]`, `att_wk[k]`, `att_wv[k]` are `d × d/h` and `att_wo` is
//!   `d × d`; they act on row vectors (`u · W`).
//! * `pool_ws` is `d × d` acting on column vectors.

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Scalar type of a model: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Default + Send + Sync + 'static {}

/// Dimensions that fix the size of every array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub d: usize,
    pub heads: usize,
    pub views: usize,
    pub users: usize,
    pub items: usize,
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::HeadMismatch { d: self.d, h: self.heads });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Identifies one trainable array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    UserBase,
    ItemEmb,
    ConvP,
    ConvPBias,
    ConvW,
    ConvWBias,
    ViewZ,
    AttWq,
    AttWk,
    AttWv,
    AttWo,
    PoolWs,
    PoolBs,
    PoolAs,
}

impl Block {
    pub const ALL: [Block; 14] = [
        Block::UserBase,
        Block::ItemEmb,
        Block::ConvP,
        Block::ConvPBias,
        Block::ConvW,
        Block::ConvWBias,
        Block::ViewZ,
        Block::AttWq,
        Block::AttWk,
        Block::AttWv,
        Block::AttWo,
        Block::PoolWs,
        Block::PoolBs,
        Block::PoolAs,
    ];

    /// Blocks stored densely in [`Gradients`]; user and item rows are sparse.
    pub const DENSE: [Block; 12] = [
        Block::ConvP,
        Block::ConvPBias,
        Block::ConvW,
        Block::ConvWBias,
        Block::ViewZ,
        Block::AttWq,
        Block::AttWk,
        Block::AttWv,
        Block::AttWo,
        Block::PoolWs,
        Block::PoolBs,
        Block::PoolAs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::UserBase => "user_base",
            Block::ItemEmb => "item_emb",
            Block::ConvP => "conv_P",
            Block::ConvPBias => "conv_p",
            Block::ConvW => "conv_W",
            Block::ConvWBias => "conv_w",
            Block::ViewZ => "view_z",
            Block::AttWq => "att_WQ",
            Block::AttWk => "att_WK",
            Block::AttWv => "att_WV",
            Block::AttWo => "att_WO",
            Block::PoolWs => "pool_Ws",
            Block::PoolBs => "pool_bs",
            Block::PoolAs => "pool_as",
        }
    }

    pub fn len(self, s: &Shape) -> usize {
        let d = s.d;
        match self {
            Block::UserBase => s.users * d,
            Block::ItemEmb => s.items * d,
            Block::ConvP => s.views * d * d,
            Block::ConvPBias | Block::ConvWBias => s.views * d,
            Block::ConvW => s.views * d * 2 * d,
            Block::ViewZ => s.views * s.views * d,
            Block::AttWq | Block::AttWk | Block::AttWv => s.heads * d * s.head_dim(),
            Block::AttWo | Block::PoolWs => d * d,
            Block::PoolBs | Block::PoolAs => d,
        }
    }

    /// Whether this block belongs to the convolution / view fusion.
    pub fn is_conv(self) -> bool {
        matches!(self, Block::ConvP | Block::ConvPBias | Block::ConvW | Block::ConvWBias | Block::ViewZ)
    }

    pub fn is_attention(self) -> bool {
        matches!(
            self,
            Block::AttWq | Block::AttWk | Block::AttWv | Block::AttWo | Block::PoolWs | Block::PoolBs | Block::PoolAs
        )
    }

    fn init_range(self, s: &Shape) -> Option<f64> {
        let d = s.d as f64;
        let glorot = |fan_in: f64, fan_out: f64| (6.0 / (fan_in + fan_out)).sqrt();
        match self {
            Block::UserBase | Block::ItemEmb => Some(0.5 / d),
            Block::ConvP | Block::AttWo | Block::PoolWs => Some(glorot(d, d)),
            Block::ConvW => Some(glorot(2.0 * d, d)),
            Block::ViewZ => Some(glorot(s.views as f64 * d, 1.0)),
            Block::AttWq | Block::AttWk | Block::AttWv => Some(glorot(d, s.head_dim() as f64)),
            Block::PoolAs => Some(glorot(d, 1.0)),
            Block::ConvPBias | Block::ConvWBias | Block::PoolBs => None,
        }
    }
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<F> {
    pub shape: Shape,
    pub user_base: Vec<F>,
    pub item_emb: Vec<F>,
    pub conv_p: Vec<F>,
    pub conv_p_bias: Vec<F>,
    pub conv_w: Vec<F>,
    pub conv_w_bias: Vec<F>,
    pub view_z: Vec<F>,
    pub att_wq: Vec<F>,
    pub att_wk: Vec<F>,
    pub att_wv: Vec<F>,
    pub att_wo: Vec<F>,
    pub pool_ws: Vec<F>,
    pub pool_bs: Vec<F>,
    pub pool_as: Vec<F>,
}

impl<F: Real> ModelState<F> {
    /// Every array filled with zeros.
    pub fn zeroed(shape: Shape) -> Result<Self> {
        shape.validate()?;
        let z = |b: Block| vec![F::zero(); b.len(&shape)];
        Ok(ModelState {
            shape,
            user_base: z(Block::UserBase),
            item_emb: z(Block::ItemEmb),
            conv_p: z(Block::ConvP),
            conv_p_bias: z(Block::ConvPBias),
            conv_w: z(Block::ConvW),
            conv_w_bias: z(Block::ConvWBias),
            view_z: z(Block::ViewZ),
            att_wq: z(Block::AttWq),
            att_wk: z(Block::AttWk),
            att_wv: z(Block::AttWv),
            att_wo: z(Block::AttWo),
            pool_ws: z(Block::PoolWs),
            pool_bs: z(Block::PoolBs),
            pool_as: z(Block::PoolAs),
        })
    }

    /// Embeddings uniform in `±0.5/d`, dense weights Glorot-uniform, biases
    /// zero. Values are drawn in `f64` so that `f32` and `f64` states from the
    /// same seed agree up to rounding.
    pub fn init(shape: Shape, seed: u64) -> Result<Self> {
        let mut state = Self::zeroed(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in Block::ALL {
            if let Some(r) = block.init_range(&shape) {
                for x in state.block_mut(block) {
                    *x = F::of(rng.gen_range(-r..r));
                }
            }
        }
        Ok(state)
    }

    pub fn block(&self, b: Block) -> &[F] {
        match b {
            Block::UserBase => &self.user_base,
            Block::ItemEmb => &self.item_emb,
            Block::ConvP => &self.conv_p,
            Block::ConvPBias => &self.conv_p_bias,
            Block::ConvW => &self.conv_w,
            Block::ConvWBias => &self.conv_w_bias,
            Block::ViewZ => &self.view_z,
            Block::AttWq => &self.att_wq,
            Block::AttWk => &self.att_wk,
            Block::AttWv => &self.att_wv,
            Block::AttWo => &self.att_wo,
            Block::PoolWs => &self.pool_ws,
            Block::PoolBs => &self.pool_bs,
            Block::PoolAs => &self.pool_as,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [F] {
        match b {
            Block::UserBase => &mut self.user_base,
            Block::ItemEmb => &mut self.item_emb,
            Block::ConvP => &mut self.conv_p,
            Block::ConvPBias => &mut self.conv_p_bias,
            Block::ConvW => &mut self.conv_w,
            Block::ConvWBias => &mut self.conv_w_bias,
            Block::ViewZ => &mut self.view_z,
            Block::AttWq => &mut self.att_wq,
            Block::AttWk => &mut self.att_wk,
            Block::AttWv => &mut self.att_wv,
            Block::AttWo => &mut self.att_wo,
            Block::PoolWs => &mut self.pool_ws,
            Block::PoolBs => &mut self.pool_bs,
            Block::PoolAs => &mut self.pool_as,
        }
    }

    pub fn user(&self, u: u32) -> &[F] {
        let d = self.shape.d;
        &self.user_base[u as usize * d..(u as usize + 1) * d]
    }

    pub fn item(&self, v: u32) -> &[F] {
        let d = self.shape.d;
        &self.item_emb[v as usize * d..(v as usize + 1) * d]
    }

    /// First non-finite block, if any.
    pub fn find_non_finite(&self) -> Option<Block> {
        Block::ALL.into_iter().find(|&b| self.block(b).iter().any(|x| !x.is_finite()))
    }

    /// Converts every entry to another scalar type.
    pub fn cast<G: Real>(&self) -> ModelState<G> {
        let mut out = ModelState::<G>::zeroed(self.shape).expect("shape already validated");
        for b in Block::ALL {
            for (o, x) in out.block_mut(b).iter_mut().zip(self.block(b)) {
                *o = G::of(x.to_f64().unwrap_or(f64::NAN));
            }
        }
        out
    }
}

/// Row-sparse gradient for an embedding table. Rows may repeat; repeated
/// rows add up.
#[derive(Clone, Debug, Default)]
pub struct SparseRows<F> {
    ids: Vec<u32>,
    values: Vec<F>,
    width: usize,
}

impl<F: Real> SparseRows<F> {
    pub fn new(width: usize) -> Self {
        SparseRows { ids: Vec::new(), values: Vec::new(), width }
    }

    pub fn clear(&mut self) {
        self.ids.clear();
        self.values.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends a zero row for `id` and returns it.
    pub fn push(&mut self, id: u32) -> &mut [F] {
        self.ids.push(id);
        let start = self.values.len();
        self.values.resize(start + self.width, F::zero());
        &mut self.values[start..]
    }

    pub fn add(&mut self, id: u32, row: &[F]) {
        self.push(id).copy_from_slice(row);
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[F])> {
        self.ids.iter().copied().zip(self.values.chunks_exact(self.width.max(1)))
    }

    /// Sum of all rows for `id`.
    pub fn total(&self, id: u32) -> Vec<F> {
        let mut out = vec![F::zero(); self.width];
        for (_, row) in self.iter().filter(|&(i, _)| i == id) {
            crate::linalg::axpy(F::one(), row, &mut out);
        }
        out
    }
}

/// Gradient of one step's loss with respect to every parameter.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub users: SparseRows<F>,
    pub items: SparseRows<F>,
    /// Dense blocks, indexed like [`Block::DENSE`].
    dense: Vec<Vec<F>>,
    pub conv_touched: bool,
    pub attention_touched: bool,
}

impl<F: Real> Gradients<F> {
    pub fn new(shape: &Shape) -> Self {
        Gradients {
            users: SparseRows::new(shape.d),
            items: SparseRows::new(shape.d),
            dense: Block::DENSE.iter().map(|b| vec![F::zero(); b.len(shape)]).collect(),
            conv_touched: false,
            attention_touched: false,
        }
    }

    fn slot(b: Block) -> usize {
        Block::DENSE.iter().position(|&x| x == b).unwrap_or_else(|| panic!("{} is not a dense block", b.name()))
    }

    pub fn dense(&self, b: Block) -> &[F] {
        &self.dense[Self::slot(b)]
    }

    pub fn dense_mut(&mut self, b: Block) -> &mut [F] {
        &mut self.dense[Self::slot(b)]
    }

    /// Two dense blocks borrowed mutably at once.
    pub fn dense_pair_mut(&mut self, a: Block, b: Block) -> (&mut [F], &mut [F]) {
        let (i, j) = (Self::slot(a), Self::slot(b));
        assert_ne!(i, j);
        if i < j {
            let (lo, hi) = self.dense.split_at_mut(j);
            (&mut lo[i], &mut hi[0])
        } else {
            let (lo, hi) = self.dense.split_at_mut(i);
            (&mut hi[0], &mut lo[j])
        }
    }

    pub fn reset(&mut self) {
        self.users.clear();
        self.items.clear();
        for b in Block::DENSE {
            let touched = (b.is_conv() && self.conv_touched) || (b.is_attention() && self.attention_touched);
            if touched {
                self.dense[Self::slot(b)].iter_mut().for_each(|x| *x = F::zero());
            }
        }
        self.conv_touched = false;
        self.attention_touched = false;
    }

    /// Full gradient of block `b` as a dense vector (test and check helper).
    pub fn to_dense(&self, b: Block, shape: &Shape) -> Vec<F> {
        match b {
            Block::UserBase | Block::ItemEmb => {
                let rows = if b == Block::UserBase { &self.users } else { &self.items };
                let mut out = vec![F::zero(); b.len(shape)];
                for (id, row) in rows.iter() {
                    let start = id as usize * shape.d;
                    crate::linalg::axpy(F::one(), row, &mut out[start..start + shape.d]);
                }
                out
            }
            _ => self.dense(b).to_vec(),
        }
    }

    /// `state -= lr * self`, touching only rows and blocks that were written.
    pub fn apply(&self, state: &mut ModelState<F>, lr: F) {
        let d = state.shape.d;
        for (id, row) in self.users.iter() {
            let start = id as usize * d;
            crate::linalg::axpy(-lr, row, &mut state.user_base[start..start + d]);
        }
        for (id, row) in self.items.iter() {
            let start = id as usize * d;
            crate::linalg::axpy(-lr, row, &mut state.item_emb[start..start + d]);
        }
        for b in Block::DENSE {
            if (b.is_conv() && self.conv_touched) || (b.is_attention() && self.attention_touched) {
                crate::linalg::axpy(-lr, self.dense(b), state.block_mut(b));
            }
        }
    }

    /// Whether everything this gradient would write is finite in `state`.
    pub fn written_finite(&self, state: &ModelState<F>) -> Option<Block> {
        let d = state.shape.d;
        let rows_ok = |ids: &SparseRows<F>, table: &[F]| {
            ids.iter().all(|(id, _)| table[id as usize * d..(id as usize + 1) * d].iter().all(|x| x.is_finite()))
        };
        if !rows_ok(&self.users, &state.user_base) {
            return Some(Block::UserBase);
        }
        if !rows_ok(&self.items, &state.item_emb) {
            return Some(Block::ItemEmb);
        }
        Block::DENSE.into_iter().find(|&b| {
            ((b.is_conv() && self.conv_touched) || (b.is_attention() && self.attention_touched))
                && state.block(b).iter().any(|x| !x.is_finite())
        })
    }
}

pub const MAGIC: &[u8; 8] = b"CAGRMODL";
pub const VERSION: u32 = 1;

/// Serializes `state` as little-endian `f32` arrays.
pub fn to_bytes<F: Real>(state: &ModelState<F>) -> Vec<u8> {
    let s = &state.shape;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, s.d as u32, s.heads as u32, s.views as u32, s.users as u32, s.items as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for b in Block::ALL {
        let name = b.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let data = state.block(b);
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for x in data {
            out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes<F: Real>(bytes: &[u8]) -> Result<ModelState<F>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let mut dims = [0usize; 5];
    for x in &mut dims {
        *x = r.u32()? as usize;
    }
    let shape = Shape { d: dims[0], heads: dims[1], views: dims[2], users: dims[3], items: dims[4] };
    let mut state = ModelState::<F>::zeroed(shape)?;
    let mut seen = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name =
            std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let block = Block::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::Format(format!("unknown array `{name}`")))?;
        let count = r.u64()? as usize;
        if count != block.len(&shape) {
            return Err(Error::Shape(format!("array {name} has {count} elements, expected {}", block.len(&shape))));
        }
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("array too large".into()))?)?;
        for (x, chunk) in state.block_mut(block).iter_mut().zip(raw.chunks_exact(4)) {
            *x = F::of(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        seen.push(block);
    }
    if let Some(missing) = Block::ALL.into_iter().find(|b| !seen.contains(b)) {
        return Err(Error::Format(format!("missing array `{}`", missing.name())));
    }
    Ok(state)
}

pub fn save<F: Real>(state: &ModelState<F>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState<f32>> {
    from_bytes(&fs::read(path)?)
}

/// Loads a model and checks its dimensions against `expected`.
pub fn load_checked(path: &Path, expected: &Shape) -> Result<ModelState<f32>> {
    let state = load(path)?;
    if state.shape != *expected {
        return Err(Error::Shape(format!("model file has {:?}, configuration expects {:?}", state.shape, expected)));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(d: usize, heads: usize) -> Shape {
        Shape { d, heads, views: 2, users: 5, items: 4 }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelState::<f32>::init(shape(8, 2), 1).unwrap();
        let b = ModelState::<f32>::init(shape(8, 2), 1).unwrap();
        assert_eq!(to_bytes(&a), to_bytes(&b));
        let c = ModelState::<f32>::init(shape(8, 2), 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_ranges() {
        let s = ModelState::<f64>::init(shape(8, 2), 3).unwrap();
        assert!(s.user_base.iter().all(|x| x.abs() <= 0.5 / 8.0));
        let glorot = (6.0f64 / 24.0).sqrt();
        assert!(s.conv_w.iter().all(|x| x.abs() <= glorot));
        assert!(s.conv_p_bias.iter().chain(&s.pool_bs).all(|&x| x == 0.0));
    }

    #[test]
    fn indivisible_heads_are_rejected() {
        assert!(matches!(ModelState::<f32>::init(shape(7, 2), 1), Err(Error::HeadMismatch { d: 7, h: 2 })));
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let s = ModelState::<f32>::init(shape(4, 2), 1).unwrap();
        let mut bytes = to_bytes(&s);
        bytes[8] ^= 0xff;
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Version(_))));
        let mut bytes = to_bytes(&s);
        bytes[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Format(_))));
        let bytes = to_bytes(&s);
        assert!(matches!(from_bytes::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let s = ModelState::<f32>::init(shape(4, 2), 1).unwrap();
        save(&s, &path).unwrap();
        assert_eq!(load_checked(&path, &shape(4, 2)).unwrap(), s);
        assert!(matches!(load_checked(&path, &shape(8, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn header_layout() {
        let s = ModelState::<f32>::zeroed(shape(4, 2)).unwrap();
        let bytes = to_bytes(&s);
        assert_eq!(&bytes[..8], b"CAGRMODL");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        // first array: name length, then "user_base"
        assert_eq!(&bytes[32..36], &9u32.to_le_bytes());
        assert_eq!(&bytes[36..45], b"user_base");
        assert_eq!(&bytes[45..53], &20u64.to_le_bytes());
    }

    #[test]
    fn sparse_rows_accumulate() {
        let mut rows = SparseRows::<f64>::new(2);
        rows.add(3, &[1.0, 2.0]);
        rows.add(1, &[5.0, 5.0]);
        rows.add(3, &[0.5, 0.5]);
        assert_eq!(rows.total(3), vec![1.5, 2.5]);
        assert_eq!(rows.total(0), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn save_load_round_trip(seed in any::<u64>(), d in 1usize..5, users in 0usize..4) {
            let shape = Shape { d: d * 2, heads: 2, views: 1, users, items: 3 };
            let s = ModelState::<f32>::init(shape, seed).unwrap();
            let bytes = to_bytes(&s);
            let back = from_bytes::<f32>(&bytes).unwrap();
            prop_assert_eq!(to_bytes(&back), bytes);
            prop_assert_eq!(back, s);
        }
    }
}
