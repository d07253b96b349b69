use super::{Ordering, SolverError, SparseSpd};

/// Parent of every column in the elimination tree; `None` for roots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationTree {
    pub parent: Vec<Option<usize>>,
}

impl EliminationTree {
    /// Liu's algorithm with path compression over the lower pattern.
    fn build(n: usize, row_lists: &[Vec<usize>]) -> Self {
        let mut parent = vec![None; n];
        let mut ancestor: Vec<Option<usize>> = vec![None; n];
        for (i, cols) in row_lists.iter().enumerate() {
            for &k in cols {
                let mut node = k;
                loop {
                    let next = ancestor[node];
                    ancestor[node] = Some(i);
                    match next {
                        Some(a) if a == i => break,
                        Some(a) => node = a,
                        None => {
                            parent[node] = Some(i);
                            break;
                        }
                    }
                }
            }
        }
        Self { parent }
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.parent.len()];
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(j);
            }
        }
        ch
    }
}

/// Columns grouped into dependency-free layers; leaves are level 0 and each
/// parent sits one level above its highest child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSchedule {
    pub levels: Vec<Vec<usize>>,
    pub level_of: Vec<usize>,
}

impl LevelSchedule {
    fn from_tree(tree: &EliminationTree) -> Self {
        let n = tree.parent.len();
        let mut level_of = vec![0usize; n];
        for j in 0..n {
            if let Some(p) = tree.parent[j] {
                level_of[p] = level_of[p].max(level_of[j] + 1);
            }
        }
        let depth = level_of.iter().max().map_or(0, |m| m + 1);
        let mut levels = vec![Vec::new(); depth];
        for (j, &l) in level_of.iter().enumerate() {
            levels[l].push(j);
        }
        Self { levels, level_of }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max_width(&self) -> usize {
        self.levels.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Everything about a factorization that depends only on the pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicFactor {
    pub(crate) order: usize,
    /// `perm[new] = old`
    pub(crate) perm: Vec<usize>,
    pub(crate) etree: EliminationTree,
    pub(crate) schedule: LevelSchedule,
    /// Pattern of the input, to reject a different matrix at factorization.
    pub(crate) a_col_ptr: Vec<usize>,
    pub(crate) a_row_idx: Vec<usize>,
    /// Permuted lower pattern and where each input entry lands in it.
    pub(crate) c_col_ptr: Vec<usize>,
    pub(crate) c_row_idx: Vec<usize>,
    pub(crate) a_to_c: Vec<usize>,
    /// Pattern of L; each column starts with its diagonal.
    pub(crate) l_col_ptr: Vec<usize>,
    pub(crate) l_row_idx: Vec<usize>,
    /// Off-diagonal row structure of L: for row j, the columns k < j with
    /// L(j,k) != 0 and the position of that entry.
    pub(crate) r_ptr: Vec<usize>,
    pub(crate) r_col: Vec<usize>,
    pub(crate) r_pos: Vec<usize>,
}

impl SymbolicFactor {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn elimination_tree(&self) -> &EliminationTree {
        &self.etree
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn nnz_l(&self) -> usize {
        self.l_row_idx.len()
    }

    /// Entries of L beyond the permuted input pattern.
    pub fn fill_in(&self) -> usize {
        self.nnz_l() - self.c_row_idx.len()
    }

    /// Rows of column `j` of L, diagonal first.
    pub fn column_pattern(&self, j: usize) -> &[usize] {
        &self.l_row_idx[self.l_col_ptr[j]..self.l_col_ptr[j + 1]]
    }
}

/// Determines the fill pattern, the elimination tree and the level schedule
/// of `P A Pᵀ` for the chosen ordering.
pub fn symbolic_analyze(a: &SparseSpd, ordering: Ordering) -> Result<SymbolicFactor, SolverError> {
    let n = a.order();
    for c in 0..n {
        if a.position(c, c).is_none() {
            return Err(SolverError::StructurallySingular(c));
        }
    }
    let perm = ordering.permutation(a)?;
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }

    // Permuted lower pattern C, remembering where each entry of A goes.
    let mut placed: Vec<(usize, usize, usize)> = Vec::with_capacity(a.nnz_lower());
    for c in 0..n {
        let span = a.col_ptr()[c]..a.col_ptr()[c + 1];
        for k in span {
            let (r2, c2) = (inv[a.row_idx()[k]], inv[c]);
            let (r2, c2) = if r2 >= c2 { (r2, c2) } else { (c2, r2) };
            placed.push((c2, r2, k));
        }
    }
    placed.sort_unstable();
    let mut c_col_ptr = vec![0; n + 1];
    let mut c_row_idx = Vec::with_capacity(placed.len());
    let mut a_to_c = vec![0; placed.len()];
    for (pos, &(c, r, k)) in placed.iter().enumerate() {
        c_col_ptr[c + 1] += 1;
        c_row_idx.push(r);
        a_to_c[k] = pos;
    }
    for c in 0..n {
        c_col_ptr[c + 1] += c_col_ptr[c];
    }

    // Strict lower entries by row: row_lists[i] = { k < i : C(i,k) != 0 }.
    let mut row_lists = vec![Vec::new(); n];
    for c in 0..n {
        for &r in &c_row_idx[c_col_ptr[c]..c_col_ptr[c + 1]] {
            if r != c {
                row_lists[r].push(c);
            }
        }
    }
    let etree = EliminationTree::build(n, &row_lists);

    // Row patterns of L via row subtrees; columns come out sorted by row.
    let mut mark = vec![usize::MAX; n];
    let mut l_cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    let mut row_pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        mark[i] = i;
        let mut reach = Vec::new();
        for &k in &row_lists[i] {
            let mut node = k;
            while mark[node] != i {
                mark[node] = i;
                reach.push(node);
                match etree.parent[node] {
                    Some(p) => node = p,
                    None => break,
                }
            }
        }
        reach.sort_unstable();
        for &k in &reach {
            l_cols[k].push(i);
        }
        row_pattern[i] = reach;
    }
    let mut l_col_ptr = Vec::with_capacity(n + 1);
    l_col_ptr.push(0);
    let mut l_row_idx = Vec::new();
    for col in &l_cols {
        l_row_idx.extend_from_slice(col);
        l_col_ptr.push(l_row_idx.len());
    }
    let mut r_ptr = Vec::with_capacity(n + 1);
    r_ptr.push(0);
    let mut r_col = Vec::new();
    let mut r_pos = Vec::new();
    for (j, ks) in row_pattern.iter().enumerate() {
        for &k in ks {
            let col = &l_row_idx[l_col_ptr[k]..l_col_ptr[k + 1]];
            let off = col.binary_search(&j).expect("row in column pattern");
            r_col.push(k);
            r_pos.push(l_col_ptr[k] + off);
        }
        r_ptr.push(r_col.len());
    }

    let schedule = LevelSchedule::from_tree(&etree);
    Ok(SymbolicFactor {
        order: n,
        perm,
        etree,
        schedule,
        a_col_ptr: a.col_ptr().to_vec(),
        a_row_idx: a.row_idx().to_vec(),
        c_col_ptr,
        c_row_idx,
        a_to_c,
        l_col_ptr,
        l_row_idx,
        r_ptr,
        r_col,
        r_pos,
    })
}
