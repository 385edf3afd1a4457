use dta_core::smiles::{read_golden, MolecularGraph, ATOM_FEATURES};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

const GOLDEN: &str = include_str!("data/golden_smiles.tsv");

fn oracle_adjacency(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::identity(n, n);
    for &(i, j) in edges {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let d = DMatrix::from_diagonal(&a.row_sum().transpose().map(|v| 1.0 / v.sqrt()));
    &d * a * &d
}

fn as_matrix(g: &MolecularGraph) -> DMatrix<f64> {
    let n = g.num_atoms();
    DMatrix::from_row_slice(n, n, g.norm_adjacency())
}

#[test]
fn golden_corpus_counts() {
    let corpus = read_golden(GOLDEN).unwrap();
    assert!(corpus.len() >= 20);
    for e in corpus {
        let g = MolecularGraph::from_smiles(&e.smiles).unwrap_or_else(|err| panic!("{}: {err}", e.smiles));
        assert_eq!((g.num_atoms(), g.num_bonds()), (e.atoms, e.bonds), "{}", e.smiles);
        assert_eq!(g.feature_width(), ATOM_FEATURES);
    }
}

#[test]
fn adjacency_matches_dense_oracle_and_spectrum() {
    for e in read_golden(GOLDEN).unwrap() {
        let g = MolecularGraph::from_smiles(&e.smiles).unwrap();
        let ours = as_matrix(&g);
        let oracle = oracle_adjacency(g.num_atoms(), g.edges());
        assert!((&ours - &oracle).amax() < 1e-12, "{}", e.smiles);
        assert!((&ours - ours.transpose()).amax() == 0.0);
        let eig = SymmetricEigen::new(ours).eigenvalues;
        assert!(
            eig.iter().all(|&l| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&l)),
            "{}",
            e.smiles
        );
        // each molecule is connected, so the top eigenvalue is exactly one
        assert!((eig.max() - 1.0).abs() < 1e-9, "{}", e.smiles);
    }
}

fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let len = pairs.len();
        (Just(n), proptest::sample::subsequence(pairs, 0..=len))
    })
}

proptest! {
    #[test]
    fn spectrum_bounded_for_arbitrary_graphs((n, edges) in random_graph()) {
        let g = MolecularGraph::with_features(vec![1.0; n * 3], 3, edges.clone()).unwrap();
        let m = as_matrix(&g);
        prop_assert!((&m - oracle_adjacency(n, &edges)).amax() < 1e-12);
        let eig = SymmetricEigen::new(m).eigenvalues;
        prop_assert!(eig.iter().all(|&l| l.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn relabelling_permutes_adjacency(
        (n, edges) in random_graph(),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let feats: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        let g = MolecularGraph::with_features(feats, 2, edges).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let p = g.permuted(&perm).unwrap();
        let (a, b) = (g.norm_adjacency(), p.norm_adjacency());
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a[i * n + j], b[perm[i] * n + perm[j]]);
            }
            prop_assert_eq!(&g.node_features()[i * 2..i * 2 + 2], &p.node_features()[perm[i] * 2..perm[i] * 2 + 2]);
        }
    }
}
