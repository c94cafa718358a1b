use csplab_core::budget::Budget;
use csplab_core::terms::{scan_semilattice_edges, is_thin_semilattice_edge, EdgeKind};
use csplab_core::testkit;

fn main() {
    let b = Budget::default();
    let m = testkit::m4mix();
    let (certs, free) = scan_semilattice_edges(&m, &b).unwrap();
    println!("m4mix semilattice-free: {free}, certs: {}", certs.len());
    for c in &certs {
        println!(
            "  edge ({},{}) kind {:?} theta {} sub-universe {:?}",
            c.a, c.b, c.kind, c.witness_congruence.render_blocks(), c.embedding
        );
    }
    println!("thin edges:");
    for a in 0..4u8 {
        for c in 0..4u8 {
            if a != c && is_thin_semilattice_edge(&m, a, c, &b).unwrap() {
                println!("  ({a},{c})");
            }
        }
    }
    // check the basic operation f against the dot conditions by hand
    let f_table: Vec<u8> = (0..16).map(|i| {
        let (x, y) = ((i / 4) as u8, (i % 4) as u8);
        m.apply_op("f", &[x, y]).unwrap()
    }).collect();
    println!("f table: {:?}", f_table);
    for cert in &certs {
        let pos = |e: u8| cert.embedding.iter().position(|&x| x == e).unwrap() as u8;
        let th = &cert.witness_congruence;
        let f = |x: u8, y: u8| f_table[(x * 4 + y) as usize];
        let u = pos(f(cert.a, cert.b));
        let v = pos(f(cert.b, cert.a));
        let ok1 = th.related(u, v);
        let ok2 = th.related(u, pos(cert.a)) || th.related(u, pos(cert.b));
        if !(ok1 && ok2) {
            println!("f FAILS condition (i) on cert ({},{}) kind {:?}: f(a,b)={} f(b,a)={}",
                cert.a, cert.b, cert.kind, f(cert.a, cert.b), f(cert.b, cert.a));
        }
    }
    let mut fails = 0;
    for a in 0..4u8 {
        for bb in 0..4u8 {
            let c = f_table[(a * 4 + bb) as usize];
            if c != a && !is_thin_semilattice_edge(&m, a, c, &Budget::default()).unwrap() {
                println!("f FAILS condition (ii) at ({a},{bb}) -> {c}");
                fails += 1;
            }
        }
    }
    println!("condition (ii) failures: {fails}");
}
