from gasnet.driver import main

raise SystemExit(main())
